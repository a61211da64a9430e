import numpy as np
import pytest

from semmix.errors import AlignmentError, FormatError, LossError, NumericError
from semmix.mixing import mix_s_to_t
from semmix.model import (backward, dice_loss, features, forward, init_params,
                          load_params, params_from_bytes, params_to_bytes, predict, save_params,
                          sgd_step, zero_params)
from semmix.selection import PatchSelection
from semmix.types import IGNORE, LabelKind, LabelSet, PointCloud, make_rng

from conftest import random_frame


def fd_gradient(params, cloud, labels, step=1e-4, **kw):
    base = params.flat().astype(np.float64)
    out = np.empty_like(base)
    for j in range(base.size):
        up, dn = base.copy(), base.copy()
        up[j] += step
        dn[j] -= step
        lu = backward(params.with_flat(up), cloud, labels, **kw).loss
        ld = backward(params.with_flat(dn), cloud, labels, **kw).loss
        out[j] = (lu - ld) / (2 * step)
    return out


def rel_error(analytic, numeric):
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-12)
    return np.abs(analytic - numeric).max() / scale


def small_params(seed, n_classes=3, hidden=8):
    return init_params(n_classes, make_rng(seed), hidden=hidden, dtype=np.float64)


def test_zero_weights_give_uniform(rng):
    p = zero_params(4, hidden=16)
    probs = forward(p, random_frame(rng, 25).cloud)
    np.testing.assert_allclose(probs, 0.25)


def test_forward_rows_are_distributions(rng):
    p = init_params(3, rng)
    probs = forward(p, random_frame(rng, 100).cloud)
    assert probs.shape == (100, 3)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)
    assert (probs >= 0).all()


def test_forward_is_pointwise(rng):
    p = init_params(3, rng)
    f = random_frame(rng, 50)
    perm = rng.permutation(50)
    np.testing.assert_allclose(forward(p, f.cloud)[perm], forward(p, f.cloud.take(perm)),
                               rtol=0, atol=1e-12)


def test_forward_empty_cloud(rng):
    assert forward(init_params(3, rng), PointCloud.empty()).shape == (0, 3)


def test_features_missing_intensity_is_zero(rng):
    f = random_frame(rng, 5, with_intensity=False)
    feats = features(f.cloud, 10.0)
    assert feats.shape == (5, 5)
    assert (feats[:, 4] == 0).all()
    np.testing.assert_allclose(feats[:, 3], np.linalg.norm(f.cloud.coords, axis=1) / 10.0,
                               rtol=1e-6)


def test_non_finite_activation_names_layer(rng):
    p = init_params(3, rng)
    bad = p.with_flat(np.full(p.size, np.inf))
    with pytest.raises(NumericError, match="layer 0"):
        forward(bad, random_frame(rng, 3).cloud)


def test_predict_maps_columns_to_class_ids(rng):
    p = init_params(3, rng)
    f = random_frame(rng, 30)
    cols = forward(p, f.cloud).argmax(axis=1)
    ids = [5, 9, 11]
    np.testing.assert_array_equal(predict(p, f.cloud, ids).labels, np.array(ids)[cols])


# -- Dice ----------------------------------------------------------------------

def test_dice_single_point_hand_case():
    probs = np.array([[0.6, 0.4]])
    present = dice_loss(probs, LabelSet([0]))
    assert present.loss == pytest.approx(2 / 13, abs=1e-12)
    every = dice_loss(probs, LabelSet([0]), all_classes=True)
    assert every.loss == pytest.approx(20 / 91, abs=1e-12)


def test_dice_perfect_prediction_is_zero():
    probs = np.eye(3)[[0, 1, 2, 1]]
    assert dice_loss(probs, LabelSet([0, 1, 2, 1])).loss == pytest.approx(0.0, abs=1e-12)


def test_dice_ignores_ignore_points():
    probs = np.array([[0.6, 0.4], [0.1, 0.9]])
    res = dice_loss(probs, LabelSet([0, IGNORE]))
    assert res.loss == pytest.approx(2 / 13, abs=1e-12)
    assert (res.grad[1] == 0).all()


def test_dice_all_ignore_raises():
    with pytest.raises(LossError):
        dice_loss(np.array([[0.5, 0.5]]), LabelSet([IGNORE]))


def test_dice_label_outside_classes():
    with pytest.raises(LossError):
        dice_loss(np.array([[0.5, 0.5]]), LabelSet([7]), class_ids=[0, 1])
    with pytest.raises(AlignmentError):
        dice_loss(np.array([[0.5, 0.5]]), LabelSet([0, 1]))


def test_dice_permutation_invariant(rng):
    probs = rng.dirichlet(np.ones(4), 40)
    labels = rng.integers(0, 4, 40)
    perm = rng.permutation(40)
    a = dice_loss(probs, LabelSet(labels)).loss
    b = dice_loss(probs[perm], LabelSet(labels[perm])).loss
    assert a == pytest.approx(b, abs=1e-12)


@pytest.mark.parametrize("all_classes", [False, True])
def test_dice_prob_gradient_matches_finite_differences(rng, all_classes):
    probs = rng.dirichlet(np.ones(3), 10)
    labels = LabelSet(rng.integers(0, 3, 10))
    grad = dice_loss(probs, labels, all_classes=all_classes).grad
    num = np.zeros_like(probs)
    for i in range(10):
        for c in range(3):
            up, dn = probs.copy(), probs.copy()
            up[i, c] += 1e-6
            dn[i, c] -= 1e-6
            num[i, c] = (dice_loss(up, labels, all_classes=all_classes).loss
                         - dice_loss(dn, labels, all_classes=all_classes).loss) / 2e-6
    assert rel_error(grad, num) < 1e-6


# -- backprop ------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(3))
def test_param_gradient_matches_finite_differences(seed):
    rng = make_rng(seed)
    f = random_frame(rng, 10, ignore_frac=0.2)
    if not f.labels.valid.any():
        pytest.skip("no valid labels drawn")
    p = small_params(seed)
    res = backward(p, f.cloud, f.labels)
    assert res.grad.shape == (p.size,)
    assert rel_error(res.grad, fd_gradient(p, f.cloud, f.labels)) < 1e-3


def test_gradient_through_a_mixed_sample():
    rng = make_rng(77)
    src = random_frame(rng, 12)
    tgt = random_frame(rng, 10).unlabeled()
    pseudo = LabelSet(rng.integers(-1, 3, 10), LabelKind.PSEUDO)
    mixed = mix_s_to_t(src, PatchSelection.from_classes(src.labels, [1]), tgt, pseudo,
                       rng=rng).frame
    p = small_params(5)
    analytic = backward(p, mixed.cloud, mixed.labels).grad
    assert rel_error(analytic, fd_gradient(p, mixed.cloud, mixed.labels)) < 1e-3


def test_stationary_point_at_zero_params():
    # zero weights: every hidden unit is zero so the only live gradient is on
    # the output bias, which vanishes when classes are balanced.
    coords = np.array([[1.0, 2.0, 0.5], [-1.0, -2.0, 0.5], [3.0, 0.0, 1.0], [-3.0, 0.0, 1.0]])
    cloud = PointCloud(coords, np.full(4, 0.5))
    p = zero_params(2, hidden=8).astype(np.float64)
    res = backward(p, cloud, LabelSet([0, 1, 0, 1]))
    np.testing.assert_allclose(res.grad, 0.0, atol=1e-15)


def test_sgd_descends_on_separable_toy():
    rng = make_rng(3)
    a = rng.normal([5, 0, 0], 0.3, (50, 3))
    b = rng.normal([-5, 0, 0], 0.3, (50, 3))
    cloud = PointCloud(np.vstack([a, b]))
    labels = LabelSet(np.r_[np.zeros(50, int), np.ones(50, int)])
    p = init_params(2, rng, hidden=16)
    first = backward(p, cloud, labels).loss
    for _ in range(200):
        p = sgd_step(p, backward(p, cloud, labels).grad, lr=0.5)
    assert backward(p, cloud, labels).loss < first * 0.5


def test_sgd_step_arithmetic():
    p = zero_params(2, hidden=3).astype(np.float64)
    grad = np.arange(p.size, dtype=np.float64)
    q = sgd_step(p, grad, lr=0.1)
    np.testing.assert_allclose(q.flat(), -0.1 * grad)
    assert sgd_step(p, grad, lr=0.0) == p
    with pytest.raises(AlignmentError):
        sgd_step(p, grad[:-1])


# -- checkpoints ---------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    p = init_params(3, rng, hidden=16, feature_scale=7.5)
    save_params(tmp_path / "m.ckpt", p)
    q = load_params(tmp_path / "m.ckpt")
    assert q == p
    assert (tmp_path / "m.ckpt").read_bytes() == params_to_bytes(q)


def test_checkpoint_size(rng):
    p = init_params(3, rng, hidden=16)
    header = 8 + 16 + 6 * 4 + 3 * 2 * 4 + 3 * 1 * 4
    assert len(params_to_bytes(p)) == header + 4 * p.size


@pytest.mark.parametrize("mutate", [
    lambda b: b"NOTMAGIC" + b[8:],
    lambda b: b[:20],
    lambda b: b[:-4],
    lambda b: b + b"\0",
])
def test_malformed_checkpoint(rng, mutate):
    data = params_to_bytes(init_params(3, rng, hidden=4))
    with pytest.raises(FormatError):
        params_from_bytes(mutate(data))
