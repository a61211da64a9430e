"""Domain types shared by every stage: clouds, label sets, class sets, datasets.

All values are immutable after construction (numpy buffers are flagged
read-only) so frames can be shared freely between stages and threads.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import AlignmentError, DataError, StatisticsError

IGNORE = -1


def _frozen(arr):
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N points as float32 xyz (meters) plus optional float32 intensity."""

    coords: np.ndarray
    intensity: Optional[np.ndarray] = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float32)
        if coords.size == 0:
            coords = coords.reshape(0, 3)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise DataError(f"coords must have shape (N, 3), got {coords.shape}")
        bad = ~np.isfinite(coords).all(axis=1)
        if bad.any():
            raise DataError(f"non-finite coordinate at point {int(np.argmax(bad))}")
        object.__setattr__(self, "coords", _frozen(coords))
        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=np.float32).reshape(-1)
            if len(inten) != len(coords):
                raise AlignmentError(
                    f"intensity has {len(inten)} values for {len(coords)} points")
            bad = ~np.isfinite(inten)
            if bad.any():
                raise DataError(f"non-finite intensity at point {int(np.argmax(bad))}")
            object.__setattr__(self, "intensity", _frozen(inten))

    def __len__(self):
        return len(self.coords)

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        if (self.intensity is None) != (other.intensity is None):
            return False
        same = np.array_equal(self.coords, other.coords)
        if self.intensity is not None:
            same = same and np.array_equal(self.intensity, other.intensity)
        return same

    __hash__ = None

    @classmethod
    def empty(cls, with_intensity=False):
        return cls(np.zeros((0, 3), np.float32),
                   np.zeros(0, np.float32) if with_intensity else None)

    def intensity_or_zero(self):
        if self.intensity is None:
            return np.zeros(len(self), np.float32)
        return self.intensity

    def with_coords(self, coords):
        return PointCloud(coords, self.intensity)

    def take(self, index):
        inten = None if self.intensity is None else self.intensity[index]
        return PointCloud(self.coords[index], inten)


class LabelKind(enum.Enum):
    GROUND_TRUTH = "ground_truth"
    PSEUDO = "pseudo"
    MIXED = "mixed"


@dataclass(frozen=True, eq=False)
class LabelSet:
    labels: np.ndarray
    kind: LabelKind = LabelKind.GROUND_TRUTH

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            raise DataError(f"labels must be integers, got dtype {labels.dtype}")
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int32).reshape(-1)))

    def __len__(self):
        return len(self.labels)

    def __eq__(self, other):
        if not isinstance(other, LabelSet):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.labels, other.labels)

    __hash__ = None

    @property
    def valid(self):
        return self.labels != IGNORE

    def present_classes(self):
        # labels are immutable, so the sorted class list is computed once
        cached = self.__dict__.get("_present")
        if cached is None:
            cached = tuple(int(c) for c in np.unique(self.labels[self.valid]))
            object.__setattr__(self, "_present", cached)
        return list(cached)

    def take(self, index, kind=None):
        return LabelSet(self.labels[index], kind or self.kind)


@dataclass(frozen=True)
class ClassSet:
    ids: tuple
    names: tuple

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ids)
        names = tuple(str(n) for n in self.names)
        if len(ids) != len(names):
            raise DataError("class ids and names differ in length")
        if len(set(ids)) != len(ids):
            raise DataError(f"duplicate class ids in {ids}")
        if IGNORE in ids:
            raise DataError("IGNORE cannot be a member of the class set")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "names", names)

    def __len__(self):
        return len(self.ids)

    @classmethod
    def from_names(cls, names: Sequence[str]):
        return cls(tuple(range(len(names))), tuple(names))

    def id_of(self, name):
        try:
            return self.ids[self.names.index(name)]
        except ValueError:
            raise DataError(f"unknown class name {name!r}") from None

    def name_of(self, cid):
        return self.names[self.ids.index(cid)]

    def check(self, labels: LabelSet):
        """Raise DataError if any non-IGNORE id falls outside the set."""
        present = set(labels.present_classes())
        extra = present - set(self.ids)
        if extra:
            raise DataError(f"labels outside class set: {sorted(extra)}")


@dataclass(frozen=True)
class ClassFrequencyDistribution:
    """Normalized per-class point frequency over the labeled dataset."""

    probs: dict

    def __post_init__(self):
        total = sum(self.probs.values())
        if self.probs and abs(total - 1.0) > 1e-9:
            raise StatisticsError(f"frequencies sum to {total!r}, expected 1")

    def get(self, cid):
        return float(self.probs.get(cid, 0.0))


@dataclass(frozen=True, eq=False)
class Frame:
    """One scan with optional labels."""

    cloud: PointCloud
    labels: Optional[LabelSet] = None
    name: str = ""

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.cloud):
            raise AlignmentError(
                f"frame {self.name or '?'}: {len(self.labels)} labels for "
                f"{len(self.cloud)} points")

    def __len__(self):
        return len(self.cloud)

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        if (self.labels is None) != (other.labels is None):
            return False
        return self.cloud == other.cloud and (self.labels is None or self.labels == other.labels)

    __hash__ = None

    def unlabeled(self):
        return Frame(self.cloud, None, self.name)


@dataclass
class Dataset:
    frames: list = field(default_factory=list)
    name: str = ""

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def cardinality(self):
        return len(self.frames)

    @property
    def is_labeled(self):
        return bool(self.frames) and all(f.labels is not None for f in self.frames)

    def unlabeled(self):
        return Dataset([f.unlabeled() for f in self.frames], self.name)


def make_rng(seed) -> np.random.Generator:
    """Seeded generator; all randomness in the package flows from one of these."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed) & (2**64 - 1))))


def spawn(rng: np.random.Generator, n: int) -> list:
    """Deterministically derive ``n`` independent child streams."""
    return rng.spawn(n)


def _merge_kind(a, b):
    return a if a == b else LabelKind.MIXED


def concat(a: Frame, b: Frame):
    """Stack ``b`` after ``a``. Returns the merged frame and the boundary index."""
    if (a.labels is None) != (b.labels is None):
        raise AlignmentError("cannot concatenate a labeled frame with an unlabeled one")
    coords = np.concatenate([a.cloud.coords, b.cloud.coords])
    if a.cloud.intensity is None and b.cloud.intensity is None:
        inten = None
    else:
        inten = np.concatenate([a.cloud.intensity_or_zero(), b.cloud.intensity_or_zero()])
    labels = None
    if a.labels is not None:
        labels = LabelSet(np.concatenate([a.labels.labels, b.labels.labels]),
                          _merge_kind(a.labels.kind, b.labels.kind))
    return Frame(PointCloud(coords, inten), labels), len(a)


def concat_all(frames: Iterable[Frame]) -> Frame:
    frames = list(frames)
    if not frames:
        return Frame(PointCloud.empty(), LabelSet(np.zeros(0, np.int32)))
    out = frames[0]
    for f in frames[1:]:
        out, _ = concat(out, f)
    return out


def subset(frame: Frame, mask) -> Frame:
    """Keep the masked points, preserving their relative order."""
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if len(mask) != len(frame):
        raise AlignmentError(f"mask has {len(mask)} entries for {len(frame)} points")
    labels = None if frame.labels is None else frame.labels.take(mask)
    return Frame(frame.cloud.take(mask), labels, frame.name)


def split(frame: Frame, boundary: int):
    """Inverse of :func:`concat` given its boundary index."""
    head = np.zeros(len(frame), bool)
    head[:boundary] = True
    return subset(frame, head), subset(frame, ~head)
