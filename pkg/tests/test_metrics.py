import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semmix.errors import AlignmentError
from semmix.metrics import ConfusionMatrix, accumulate, iou
from semmix.types import IGNORE, LabelSet

A, B, C = 0, 1, 2


def cm_of(pred, truth, ids=(A, B, C)):
    return accumulate(ConfusionMatrix.empty(ids), LabelSet(pred), LabelSet(truth))


def test_hand_case():
    cm = cm_of([A, B, B], [A, A, B])
    # predicted x actual
    np.testing.assert_array_equal(cm.counts[:2, :2], [[1, 0], [1, 1]])
    rep = iou(cm)
    assert rep.per_class == {A: 0.5, B: 0.5}
    assert rep.miou == 0.5


def test_perfect_and_absent_class_excluded():
    rep = iou(cm_of([A, B, B], [A, B, B]))
    assert rep.per_class == {A: 1.0, B: 1.0}
    assert C not in rep.per_class and rep.miou == 1.0


def test_empty_inputs_and_ignore():
    cm = cm_of([], [])
    assert cm.total == 0 and iou(cm).per_class == {}
    cm = cm_of([A, B, C], [IGNORE, B, IGNORE])
    assert cm.total == 1
    assert np.diag(cm.counts).sum() == 1


def test_all_correct_is_diagonal():
    cm = cm_of([A, B, C, C], [A, B, C, C])
    assert (cm.counts - np.diag(np.diag(cm.counts))).sum() == 0


def test_misaligned():
    with pytest.raises(AlignmentError):
        cm_of([A], [A, B])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(-1, 2)), min_size=1, max_size=60),
       st.integers(1, 4), st.randoms(use_true_random=False))
def test_permutation_and_duplication_invariance(pairs, k, rnd):
    pred = [p for p, _ in pairs]
    truth = [t for _, t in pairs]
    base = iou(cm_of(pred, truth))
    perm = list(range(len(pairs)))
    rnd.shuffle(perm)
    shuffled = iou(cm_of([pred[i] for i in perm], [truth[i] for i in perm]))
    dup = iou(cm_of(pred * k, truth * k))
    assert shuffled.per_class == base.per_class
    assert dup.per_class.keys() == base.per_class.keys()
    for c in base.per_class:
        assert dup.per_class[c] == pytest.approx(base.per_class[c], abs=1e-12)
    if base.per_class:
        assert 0.0 <= base.miou <= 1.0


def test_accumulate_commutes():
    a = cm_of([A, B], [B, B])
    b = cm_of([C, A], [C, C])
    np.testing.assert_array_equal((a + b).counts, (b + a).counts)


def test_report_formats():
    rep = iou(cm_of([A, B, B], [A, A, B]))
    assert rep.key_values().splitlines()[-1] == "miou=0.500000"
    assert "mIoU" in rep.table()
