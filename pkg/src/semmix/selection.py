"""Semantic patch selection.

``select_classes_f`` draws a subset of the classes present in a frame, favoring
classes that are rare in the source set (weight ``1 - freq``).
``filter_pseudo_labels_g`` keeps only teacher predictions whose confidence
reaches the threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ModelOutputError, SelectionError
from .types import IGNORE, ClassFrequencyDistribution, LabelKind, LabelSet


@dataclass(frozen=True)
class SelectionConfig:
    alpha: float = 0.5
    mu: float = 0.5
    zeta: float = 0.85

    def __post_init__(self):
        for name in ("alpha", "mu"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name}={v} must lie in (0, 1]")
        if not 0.0 <= self.zeta <= 1.0:
            raise ConfigError(f"zeta={self.zeta} must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class PatchSelection:
    chosen_classes: frozenset
    mask: np.ndarray

    @classmethod
    def from_classes(cls, labels: LabelSet, classes):
        classes = frozenset(int(c) for c in classes)
        mask = np.zeros(len(labels), bool)
        for c in classes:
            mask |= labels.labels == c
        mask.setflags(write=False)
        return cls(classes, mask)

    @classmethod
    def empty(cls, n):
        return cls(frozenset(), np.zeros(n, bool))

    def __len__(self):
        return int(self.mask.sum())


def n_selected(ratio, k):
    """Number of classes drawn out of ``k`` present: max(1, round-half-up(ratio*k))."""
    return max(1, math.floor(ratio * k + 0.5))


def class_weights(present, dist: ClassFrequencyDistribution | None, weighted=True):
    """Sampling weights over ``present`` classes.

    Falls back to uniform when unweighted, when no distribution is given, or
    when some present class has zero weight (frequency 1), since that class
    could otherwise never be drawn.
    """
    if not weighted or dist is None:
        return np.ones(len(present))
    w = np.array([1.0 - dist.get(c) for c in present])
    if (w <= 0).any():
        return np.ones(len(present))
    return w


def select_classes_f(labels: LabelSet, dist, ratio, rng, weighted=True) -> PatchSelection:
    if not 0.0 < ratio <= 1.0:
        raise ConfigError(f"selection ratio {ratio} must lie in (0, 1]")
    present = labels.present_classes()
    if not present:
        raise SelectionError("frame has no labeled points to select from")
    m = n_selected(ratio, len(present))
    w = class_weights(present, dist, weighted).tolist()
    remaining = list(present)
    chosen = []
    # sequential draws without replacement, renormalizing each time
    for _ in range(m):
        u = rng.random() * sum(w)
        j, acc = len(w) - 1, 0.0
        for i, wi in enumerate(w):
            acc += wi
            if u < acc:
                j = i
                break
        chosen.append(remaining.pop(j))
        w.pop(j)
    return PatchSelection.from_classes(labels, chosen)


def select_supervised_target(labels: LabelSet, dist, mu, rng, weighted=True) -> PatchSelection:
    """Class sampling on a labeled target frame, weighted by the *source* frequencies."""
    return select_classes_f(labels, dist, mu, rng, weighted)


def check_probs(probs, atol=1e-6):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ModelOutputError(f"expected (N, C) probabilities, got shape {probs.shape}")
    if not np.isfinite(probs).all():
        raise ModelOutputError("non-finite probability")
    if (probs < 0).any():
        raise ModelOutputError("negative probability")
    err = np.abs(probs.sum(axis=1) - 1.0)
    if len(err) and err.max() > atol:
        raise ModelOutputError(f"probability row {int(np.argmax(err))} sums to "
                               f"{probs.sum(axis=1)[np.argmax(err)]!r}")
    return probs


def filter_pseudo_labels_g(probs, zeta, class_ids=None) -> LabelSet:
    """Argmax class where max probability >= zeta, IGNORE elsewhere."""
    probs = check_probs(probs)
    if len(probs) == 0:
        return LabelSet(np.zeros(0, np.int32), LabelKind.PSEUDO)
    best = probs.argmax(axis=1)
    conf = probs[np.arange(len(probs)), best]
    ids = best if class_ids is None else np.asarray(class_ids)[best]
    return LabelSet(np.where(conf >= zeta, ids, IGNORE), LabelKind.PSEUDO)


def pseudo_coverage(pseudo: LabelSet) -> float:
    return float(pseudo.valid.mean()) if len(pseudo) else 0.0


def select_pseudo_patches(pseudo: LabelSet, dist=None, ratio=None, rng=None,
                          weighted=True) -> PatchSelection:
    """Target patches from the confident pseudo-labels.

    By default every confident point is taken; with ``ratio`` the classes are
    additionally sub-sampled like the source side.
    """
    present = pseudo.present_classes()
    if not present:
        return PatchSelection.empty(len(pseudo))
    if ratio is None:
        return PatchSelection.from_classes(pseudo, present)
    return select_classes_f(pseudo, dist, ratio, rng, weighted)
