"""Synthetic two-domain LiDAR-like scenes for desk-scale experiments.

Source scenes: a ground disk around the sensor, box-shaped objects and thin
poles placed in a forward-facing sector at separated range bands. Target
scenes are drawn the same way and then shifted (rotation about z, random
subsampling, Gaussian jitter), which mimics a sparser, noisier sensor looking
at differently laid-out streets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .types import ClassSet, Dataset, Frame, LabelSet, PointCloud

TOY_CLASSES = ClassSet.from_names(["ground", "box", "pole"])
GROUND, BOX, POLE = 0, 1, 2

SENSOR_HEIGHT = 1.7
GROUND_RANGE = (2.0, 7.0)
BOX_RANGE = (10.0, 14.0)
POLE_RANGE = (17.0, 22.0)
SECTOR = np.pi / 4
CLASS_SHARE = (0.55, 0.30, 0.15)
BOX_SIZE = (4.0, 1.8, 1.5)
POLE_RADIUS, POLE_HEIGHT = 0.15, 4.0


@dataclass(frozen=True)
class ShiftSpec:
    kind: str = "combo"
    rotate_deg: float = 60.0
    keep: float = 0.7
    noise: float = 0.03

    def __post_init__(self):
        if self.kind not in ("none", "rotate", "subsample", "noise", "combo"):
            raise ConfigError(f"unknown shift kind {self.kind!r}")
        if not 0.0 < self.keep <= 1.0:
            raise ConfigError(f"subsample keep {self.keep} must lie in (0, 1]")
        if self.noise < 0:
            raise ConfigError("noise sigma must be non-negative")

    @classmethod
    def parse(cls, text):
        """``combo`` or ``rotate:90`` / ``subsample:0.7`` / ``noise:0.03`` or
        ``combo:rotate=60,keep=0.7,noise=0.03``."""
        kind, _, arg = text.partition(":")
        if not arg:
            return cls(kind)
        if kind == "rotate":
            return cls(kind, rotate_deg=float(arg))
        if kind == "subsample":
            return cls(kind, keep=float(arg))
        if kind == "noise":
            return cls(kind, noise=float(arg))
        if kind == "combo":
            kv = dict(part.split("=") for part in arg.split(","))
            names = {"rotate": "rotate_deg", "keep": "keep", "noise": "noise"}
            try:
                return cls(kind, **{names[k]: float(v) for k, v in kv.items()})
            except KeyError as exc:
                raise ConfigError(f"unknown combo parameter {exc}") from None
        raise ConfigError(f"cannot parse shift spec {text!r}")

    @property
    def rotates(self):
        return self.kind in ("rotate", "combo")

    @property
    def subsamples(self):
        return self.kind in ("subsample", "combo")

    @property
    def jitters(self):
        return self.kind in ("noise", "combo")


def _split_counts(n, n_parts):
    """Split n points across n_parts objects (roughly evenly)."""
    base = np.full(n_parts, n // n_parts)
    base[: n % n_parts] += 1
    return base


def _ground(n, rng):
    r = rng.uniform(*GROUND_RANGE, n)
    a = rng.uniform(-np.pi, np.pi, n)
    return np.c_[r * np.cos(a), r * np.sin(a), np.full(n, -SENSOR_HEIGHT)]


def _box(n, rng):
    rad = rng.uniform(*BOX_RANGE)
    az = rng.uniform(-SECTOR, SECTOR)
    yaw = az + rng.uniform(-0.3, 0.3)
    L, W, H = BOX_SIZE
    # four sides and the roof, sampled by area
    areas = np.array([L * H, L * H, W * H, W * H, L * W])
    face = rng.choice(5, size=n, p=areas / areas.sum())
    u, v = rng.uniform(-0.5, 0.5, n), rng.uniform(0.0, 1.0, n)
    local = np.zeros((n, 3))
    for f, (x, y, z) in enumerate([
            (u * L, np.full(n, W / 2), v * H), (u * L, np.full(n, -W / 2), v * H),
            (np.full(n, L / 2), u * W, v * H), (np.full(n, -L / 2), u * W, v * H),
            (u * L, (v - 0.5) * W, np.full(n, H))]):
        m = face == f
        local[m] = np.c_[x, y, z][m]
    c, s = np.cos(yaw), np.sin(yaw)
    xy = local[:, :2] @ np.array([[c, s], [-s, c]])
    # body sits on wheels: 0.3 m clearance
    z = local[:, 2] - SENSOR_HEIGHT + 0.3
    return np.c_[xy[:, 0] + rad * np.cos(az), xy[:, 1] + rad * np.sin(az), z]


def _pole(n, rng):
    rad = rng.uniform(*POLE_RANGE)
    az = rng.uniform(-SECTOR, SECTOR)
    a = rng.uniform(-np.pi, np.pi, n)
    h = rng.uniform(0.0, POLE_HEIGHT, n)
    x = rad * np.cos(az) + POLE_RADIUS * np.cos(a)
    y = rad * np.sin(az) + POLE_RADIUS * np.sin(a)
    return np.c_[x, y, h - SENSOR_HEIGHT]


def make_scene(n_points, rng, name=""):
    counts = np.floor(np.array(CLASS_SHARE) * n_points + 0.5).astype(int)
    counts[0] = n_points - counts[1:].sum()
    parts, labels = [_ground(counts[0], rng)], [np.full(counts[0], GROUND)]
    for cls, maker in ((BOX, _box), (POLE, _pole)):
        n_obj = int(rng.integers(2, 5))
        for k in _split_counts(counts[cls], n_obj):
            parts.append(maker(int(k), rng))
            labels.append(np.full(int(k), cls))
    xyz = np.concatenate(parts)
    lab = np.concatenate(labels)
    rng_ = np.linalg.norm(xyz, axis=1)
    inten = np.clip(0.9 - rng_ / 30.0 + rng.normal(0, 0.05, len(xyz)), 0.0, 1.0)
    perm = rng.permutation(len(xyz))
    return Frame(PointCloud(xyz[perm], inten[perm]), LabelSet(lab[perm]), name)


def apply_shift(frame: Frame, shift: ShiftSpec, rng) -> Frame:
    xyz = frame.cloud.coords.astype(np.float64)
    inten = frame.cloud.intensity_or_zero()
    labels = frame.labels.labels
    if shift.rotates:
        a = np.deg2rad(shift.rotate_deg)
        c, s = np.cos(a), np.sin(a)
        xyz = xyz @ np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]]).T
    if shift.subsamples:
        k = int(np.floor(shift.keep * len(xyz) + 0.5))
        idx = np.sort(rng.choice(len(xyz), size=k, replace=False))
        xyz, inten, labels = xyz[idx], inten[idx], labels[idx]
    if shift.jitters and shift.noise > 0:
        xyz = xyz + rng.normal(0.0, shift.noise, xyz.shape)
    return Frame(PointCloud(xyz, inten), LabelSet(labels), frame.name)


def make_domains(n_frames, n_points, shift: ShiftSpec, seed, n_val=None):
    """Return (source, target, target_val) datasets, all labeled."""
    from .types import make_rng
    root = make_rng(seed)
    src_rng, tgt_rng, val_rng, shift_rng = root.spawn(4)
    n_val = max(1, n_frames // 4) if n_val is None else n_val
    source = Dataset([make_scene(n_points, src_rng, f"{i:06d}") for i in range(n_frames)],
                     "source")

    def shifted(rng, count):
        return [apply_shift(make_scene(n_points, rng, f"{i:06d}"), shift, shift_rng)
                for i in range(count)]

    target = Dataset(shifted(tgt_rng, n_frames), "target")
    target_val = Dataset(shifted(val_rng, n_val), "target_val")
    return source, target, target_val


def nearest_centroid_accuracy(dataset: Dataset):
    """Accuracy of a nearest class-centroid rule in (range, z) space, centroids
    fitted on the same data. Independent of the learned model."""
    feats, labels = [], []
    for f in dataset:
        xyz = f.cloud.coords.astype(np.float64)
        feats.append(np.c_[np.linalg.norm(xyz[:, :2], axis=1), xyz[:, 2]])
        labels.append(f.labels.labels)
    X, y = np.concatenate(feats), np.concatenate(labels)
    classes = np.unique(y)
    cents = np.stack([X[y == c].mean(axis=0) for c in classes])
    d = ((X[:, None, :] - cents[None]) ** 2).sum(axis=2)
    return float((classes[d.argmin(axis=1)] == y).mean())
