import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from semmix.errors import ConfigError, ModelOutputError, SelectionError
from semmix.selection import (SelectionConfig, filter_pseudo_labels_g, n_selected,
                              select_classes_f, select_pseudo_patches,
                              select_supervised_target)
from semmix.types import IGNORE, ClassFrequencyDistribution, LabelKind, LabelSet, make_rng

A, B, C, D = 0, 1, 2, 3


def labels_with(classes, per=5):
    return LabelSet(np.repeat(classes, per))


def test_ratio_one_takes_all(rng):
    lab = labels_with([A, B, C])
    dist = ClassFrequencyDistribution({A: 0.5, B: 0.3, C: 0.2})
    for seed in range(20):
        sel = select_classes_f(lab, dist, 1.0, make_rng(seed))
        assert sel.chosen_classes == {A, B, C}
        assert sel.mask.all()


def test_half_ratio_of_four_classes(rng):
    lab = labels_with([A, B, C, D])
    dist = ClassFrequencyDistribution({A: 0.4, B: 0.3, C: 0.2, D: 0.1})
    assert len(select_classes_f(lab, dist, 0.5, rng).chosen_classes) == 2


def test_rounding_rule():
    assert n_selected(0.5, 1) == 1
    assert n_selected(0.5, 3) == 2
    assert n_selected(0.5, 5) == 3
    assert n_selected(0.1, 3) == 1


def closed_form_pair_probs(w):
    """Probability of each unordered pair under two sequential renormalized draws."""
    W = sum(w)
    out = {}
    for i, j in itertools.combinations(range(len(w)), 2):
        out[(i, j)] = w[i] / W * w[j] / (W - w[i]) + w[j] / W * w[i] / (W - w[j])
    return out


def test_single_pick_rates_match_weights():
    lab = labels_with([A, B, C], per=1)
    dist = ClassFrequencyDistribution({A: 0.9, B: 0.05, C: 0.05})
    rng = make_rng(99)
    counts = np.zeros(3)
    for _ in range(20000):
        (c,) = select_classes_f(lab, dist, 0.3, rng).chosen_classes
        counts[c] += 1
    w = np.array([0.1, 0.95, 0.95])
    p = stats.chisquare(counts, w / w.sum() * counts.sum()).pvalue
    assert p > 0.01


def test_pair_rates_match_sequential_draw_law():
    lab = labels_with([A, B, C, D], per=1)
    dist = ClassFrequencyDistribution({A: 0.7, B: 0.2, C: 0.06, D: 0.04})
    w = [1 - 0.7, 1 - 0.2, 1 - 0.06, 1 - 0.04]
    expected = closed_form_pair_probs(w)
    rng = make_rng(5)
    n = 20000
    counts = dict.fromkeys(expected, 0)
    for _ in range(n):
        counts[tuple(sorted(select_classes_f(lab, dist, 0.5, rng).chosen_classes))] += 1
    keys = sorted(expected)
    p = stats.chisquare([counts[k] for k in keys], [expected[k] * n for k in keys]).pvalue
    assert p > 0.01


def test_unweighted_is_uniform():
    lab = labels_with([A, B, C], per=1)
    dist = ClassFrequencyDistribution({A: 0.9, B: 0.05, C: 0.05})
    rng = make_rng(3)
    counts = np.zeros(3)
    for _ in range(9000):
        (c,) = select_classes_f(lab, dist, 0.3, rng, weighted=False).chosen_classes
        counts[c] += 1
    assert stats.chisquare(counts).pvalue > 0.01


def test_degenerate_weights_fall_back_to_uniform():
    # a present class with frequency 1 would otherwise have weight 0
    lab = labels_with([A, B], per=2)
    dist = ClassFrequencyDistribution({A: 1.0})
    seen = {next(iter(select_supervised_target(lab, dist, 0.5, make_rng(s)).chosen_classes))
            for s in range(200)}
    assert seen == {A, B}


def test_supervised_target_deterministic_and_sized():
    lab = labels_with([A, B])
    dist = ClassFrequencyDistribution({A: 0.6, B: 0.4})
    s1 = select_supervised_target(lab, dist, 0.5, make_rng(11))
    s2 = select_supervised_target(lab, dist, 0.5, make_rng(11))
    assert len(s1.chosen_classes) == 1
    assert s1.chosen_classes == s2.chosen_classes
    np.testing.assert_array_equal(s1.mask, s2.mask)


def test_no_labels_is_selection_error(rng):
    with pytest.raises(SelectionError):
        select_classes_f(LabelSet([IGNORE, IGNORE]), None, 0.5, rng)
    with pytest.raises(ConfigError):
        select_classes_f(labels_with([A]), None, 0.0, rng)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-1, 5), min_size=1, max_size=80), st.floats(0.01, 1.0),
       st.integers(0, 10**6))
def test_selection_invariants(raw, ratio, seed):
    lab = LabelSet(raw)
    present = set(lab.present_classes())
    if not present:
        return
    dist = ClassFrequencyDistribution({c: 1 / len(present) for c in present})
    sel = select_classes_f(lab, dist, ratio, make_rng(seed))
    assert sel.chosen_classes <= present
    assert len(sel.chosen_classes) == n_selected(ratio, len(present))
    expected = sum(int((lab.labels == c).sum()) for c in sel.chosen_classes)
    assert int(sel.mask.sum()) == expected
    assert not sel.mask[lab.labels == IGNORE].any()


def test_filter_hand_case():
    out = filter_pseudo_labels_g([[0.9, 0.1], [0.6, 0.4]], 0.85)
    assert out.labels.tolist() == [0, IGNORE]
    assert out.kind == LabelKind.PSEUDO


def test_filter_threshold_edges():
    probs = np.array([[0.5, 0.5], [0.2, 0.8], [1.0, 0.0], [0.0, 1.0]])
    assert filter_pseudo_labels_g(probs, 0.0).labels.tolist() == [0, 1, 0, 1]
    assert filter_pseudo_labels_g(probs, 1.0).labels.tolist() == [IGNORE, IGNORE, 0, 1]


def test_filter_class_id_mapping():
    out = filter_pseudo_labels_g([[0.1, 0.9]], 0.5, class_ids=[10, 40])
    assert out.labels.tolist() == [40]


@pytest.mark.parametrize("bad", [[[0.5, 0.6]], [[np.nan, 1.0]], [[-0.1, 1.1]], [0.5, 0.5]])
def test_filter_malformed(bad):
    with pytest.raises(ModelOutputError):
        filter_pseudo_labels_g(bad, 0.5)


def random_probs(rng, n, k):
    logits = rng.normal(0, 2, (n, k))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0, 1), st.floats(0, 1))
def test_filter_monotone_and_confident(seed, z1, z2):
    lo, hi = sorted((z1, z2))
    probs = random_probs(make_rng(seed), 300, 4)
    a = filter_pseudo_labels_g(probs, lo)
    b = filter_pseudo_labels_g(probs, hi)
    assert not (b.valid & ~a.valid).any()
    assert (probs.max(axis=1)[b.valid] >= hi).all()


def test_pseudo_patches_default_takes_all_confident():
    pseudo = LabelSet([0, IGNORE, 2, 2, IGNORE], LabelKind.PSEUDO)
    sel = select_pseudo_patches(pseudo)
    assert sel.chosen_classes == {0, 2}
    assert sel.mask.tolist() == [True, False, True, True, False]
    empty = select_pseudo_patches(LabelSet([IGNORE, IGNORE], LabelKind.PSEUDO))
    assert len(empty) == 0 and not empty.chosen_classes


def test_selection_config_ranges():
    SelectionConfig(0.5, 0.5, 0.85)
    with pytest.raises(ConfigError):
        SelectionConfig(alpha=0)
    with pytest.raises(ConfigError):
        SelectionConfig(zeta=1.2)
