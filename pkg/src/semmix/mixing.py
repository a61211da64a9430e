"""Compositional mixing of patches across domains.

Each branch takes per-class patches from one frame, augments every patch
independently (``local_augment_h``), stacks them onto the whole frame of the
other domain, and augments the result as one rigid body (``global_augment_r``).
Labels travel with their points; geometry transforms never touch them.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import AlignmentError, ConfigError, SelectionError
from .selection import PatchSelection
from .types import Frame, LabelKind, LabelSet, PointCloud, concat_all, subset


class Provenance(enum.IntEnum):
    BASE = 0
    SOURCE_PATCH = 1
    TARGET_PATCH = 2
    SUPERVISED_PATCH = 3


def _check_range(name, lo, hi, bound=None):
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise ConfigError(f"{name} range [{lo}, {hi}] is invalid")
    if bound is not None and (lo < -bound or hi > bound):
        raise ConfigError(f"{name} range [{lo}, {hi}] exceeds [-{bound}, {bound}]")


@dataclass(frozen=True)
class LocalAugConfig:
    rotation: tuple = (-np.pi / 2, np.pi / 2)
    scale: tuple = (0.95, 1.05)
    keep: float = 0.5

    def __post_init__(self):
        _check_range("local rotation", *self.rotation, bound=np.pi)
        _check_range("local scale", *self.scale)
        if self.scale[0] <= 0:
            raise ConfigError("local scale must be positive")
        if not 0.0 < self.keep <= 1.0:
            raise ConfigError(f"keep fraction {self.keep} must lie in (0, 1]")


@dataclass(frozen=True)
class GlobalAugConfig:
    rotation: tuple = (-np.pi, np.pi)
    translation: tuple = (-0.2, 0.2)
    scale: tuple = (0.95, 1.05)

    def __post_init__(self):
        _check_range("global rotation", *self.rotation)
        _check_range("global translation", *self.translation)
        _check_range("global scale", *self.scale)


IDENTITY_LOCAL = LocalAugConfig((0.0, 0.0), (1.0, 1.0), 1.0)
IDENTITY_GLOBAL = GlobalAugConfig((0.0, 0.0), (0.0, 0.0), (1.0, 1.0))


@dataclass(frozen=True)
class RigidDraw:
    angle: float
    scale: np.ndarray
    translation: np.ndarray

    def apply(self, coords):
        c, s = np.cos(self.angle), np.sin(self.angle)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        xyz = np.asarray(coords, np.float64) @ rot.T
        return (xyz * self.scale + self.translation).astype(np.float32)


def draw_local(cfg: LocalAugConfig, rng) -> RigidDraw:
    angle = rng.uniform(*cfg.rotation)
    scale = rng.uniform(*cfg.scale, size=3)
    return RigidDraw(float(angle), scale, np.zeros(3))


def draw_global(cfg: GlobalAugConfig, rng) -> RigidDraw:
    angle = rng.uniform(*cfg.rotation)
    translation = rng.uniform(*cfg.translation, size=3)
    scale = rng.uniform(*cfg.scale, size=3)
    return RigidDraw(float(angle), scale, translation)


def n_kept(keep, n):
    return int(np.floor(keep * n + 0.5))


def local_augment_h(patch: Frame, cfg: LocalAugConfig, rng) -> Frame:
    """Rotate about z, scale per axis, then randomly keep round(keep*N) points."""
    if len(patch) == 0:
        return patch
    draw = draw_local(cfg, rng)
    k = n_kept(cfg.keep, len(patch))
    keep = np.zeros(len(patch), bool)
    keep[rng.choice(len(patch), size=k, replace=False)] = True
    moved = Frame(patch.cloud.with_coords(draw.apply(patch.cloud.coords)), patch.labels)
    return subset(moved, keep)


def global_augment_r(frame: Frame, cfg: GlobalAugConfig, rng) -> Frame:
    """One rotation/scale/translation draw applied to every point."""
    draw = draw_global(cfg, rng)
    return Frame(frame.cloud.with_coords(draw.apply(frame.cloud.coords)), frame.labels,
                 frame.name)


@dataclass(frozen=True, eq=False)
class MixedSample:
    frame: Frame
    provenance: np.ndarray

    def __post_init__(self):
        if len(self.provenance) != len(self.frame):
            raise AlignmentError("provenance length differs from point count")

    def __len__(self):
        return len(self.frame)

    @property
    def cloud(self) -> PointCloud:
        return self.frame.cloud

    @property
    def labels(self) -> LabelSet:
        return self.frame.labels

    def count(self, tag: Provenance) -> int:
        return int((self.provenance == tag).sum())

    def __eq__(self, other):
        if not isinstance(other, MixedSample):
            return NotImplemented
        return self.frame == other.frame and np.array_equal(self.provenance, other.provenance)

    __hash__ = None


def _patches(frame: Frame, labels: LabelSet, sel: PatchSelection, tag, cfg, rng, local_aug):
    if len(sel.mask) != len(frame):
        raise AlignmentError(f"selection covers {len(sel.mask)} points, frame has {len(frame)}")
    if len(labels) != len(frame):
        raise AlignmentError(f"{len(labels)} labels for {len(frame)} points")
    labeled = Frame(frame.cloud, labels)
    out = []
    for c in sorted(sel.chosen_classes):
        patch = subset(labeled, sel.mask & (labels.labels == c))
        if local_aug:
            patch = local_augment_h(patch, cfg, rng)
        out.append((patch, tag))
    return out


def _compose(groups, base: Frame, global_cfg, rng, global_aug):
    parts = [p for p, _ in groups] + [base]
    tags = [np.full(len(p), t, np.uint8) for p, t in groups]
    tags.append(np.full(len(base), Provenance.BASE, np.uint8))
    mixed = concat_all(parts)
    mixed = Frame(mixed.cloud, LabelSet(mixed.labels.labels, LabelKind.MIXED))
    if global_aug:
        mixed = global_augment_r(mixed, global_cfg, rng)
    prov = np.concatenate(tags)
    prov.setflags(write=False)
    return MixedSample(mixed, prov)


def _sup_groups(sup, cfg, rng, local_aug):
    if sup is None:
        return []
    frame, sel = sup
    return _patches(frame, frame.labels, sel, Provenance.SUPERVISED_PATCH, cfg, rng, local_aug)


def mix_s_to_t(source: Frame, sel_src: PatchSelection, target_u: Frame, pseudo: LabelSet,
               sup: Optional[tuple] = None, local_cfg=LocalAugConfig(),
               global_cfg=GlobalAugConfig(), rng=None, local_aug=True,
               global_aug=True) -> MixedSample:
    """Source patches (and supervised target patches) pasted into the target frame.

    ``sup`` is ``(labeled_target_frame, selection)`` when labeled target data is
    available, else None. The target frame keeps its pseudo-labels.
    """
    if len(pseudo) != len(target_u):
        raise AlignmentError(f"{len(pseudo)} pseudo-labels for {len(target_u)} target points")
    groups = _patches(source, source.labels, sel_src, Provenance.SOURCE_PATCH, local_cfg, rng,
                      local_aug)
    groups += _sup_groups(sup, local_cfg, rng, local_aug)
    return _compose(groups, Frame(target_u.cloud, pseudo), global_cfg, rng, global_aug)


def mix_t_to_s(target_u: Frame, pseudo: LabelSet, pseudo_sel: PatchSelection, source: Frame,
               sup: Optional[tuple] = None, local_cfg=LocalAugConfig(),
               global_cfg=GlobalAugConfig(), rng=None, local_aug=True,
               global_aug=True) -> MixedSample:
    """Confident target pseudo-label patches pasted into the labeled source frame."""
    if len(pseudo) != len(target_u):
        raise AlignmentError(f"{len(pseudo)} pseudo-labels for {len(target_u)} target points")
    if len(pseudo_sel.mask) == len(pseudo) and (pseudo_sel.mask & ~pseudo.valid).any():
        raise SelectionError("target selection includes points without a pseudo-label")
    groups = _patches(target_u, pseudo, pseudo_sel, Provenance.TARGET_PATCH, local_cfg, rng,
                      local_aug)
    groups += _sup_groups(sup, local_cfg, rng, local_aug)
    return _compose(groups, Frame(source.cloud, source.labels), global_cfg, rng, global_aug)
