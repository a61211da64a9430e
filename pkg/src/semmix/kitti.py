"""SemanticKITTI-format scan/label I/O and class remapping.

Scans are little-endian float32 quadruples (x, y, z, intensity); labels are
little-endian uint32 words with the semantic id in the low 16 bits and the
instance id in the high 16 bits.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AlignmentError, DataError, FormatError, RemapError, StatisticsError
from .types import (IGNORE, ClassFrequencyDistribution, ClassSet, Dataset, Frame,
                    LabelKind, LabelSet, PointCloud)

SCAN_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("<u4")
POINT_BYTES = 16
CHUNK_POINTS = 1 << 16

_UNMAPPED = -2


@dataclass(frozen=True)
class RemapTable:
    """Raw semantic id -> class id (or IGNORE), plus the class set it targets."""

    mapping: dict
    classes: ClassSet

    def __post_init__(self):
        valid = set(self.classes.ids) | {IGNORE}
        for raw, cid in self.mapping.items():
            if not 0 <= int(raw) < 1 << 16:
                raise RemapError(f"raw id {raw} outside the 16-bit semantic range")
            if cid not in valid:
                raise RemapError(f"raw id {raw} maps to unknown class id {cid}")
        lut = np.full(1 << 16, _UNMAPPED, np.int32)
        for raw, cid in self.mapping.items():
            lut[int(raw)] = cid
        object.__setattr__(self, "_lut", lut)

    def apply(self, raw_ids):
        out = self._lut[np.asarray(raw_ids, dtype=np.int64)]
        missing = out == _UNMAPPED
        if missing.any():
            raw = int(np.asarray(raw_ids)[np.argmax(missing)])
            raise RemapError(f"raw label id {raw} is not in the remap table")
        return out

    def inverse(self):
        """Class id (or IGNORE) -> smallest raw id mapping to it."""
        inv = {}
        for raw in sorted(self.mapping):
            inv.setdefault(self.mapping[raw], int(raw))
        return inv

    @classmethod
    def identity(cls, classes: ClassSet, ignore_raw=None):
        mapping = {cid: cid for cid in classes.ids}
        if ignore_raw is not None:
            mapping[ignore_raw] = IGNORE
        return cls(mapping, classes)


def load_remap(path) -> RemapTable:
    """Parse a remap config.

    Format::

        [classes]
        names = ground, box, pole

        [map]
        0 = IGNORE
        40 = ground
    """
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FormatError(f"cannot read remap table {path}")
    try:
        names = [n.strip() for n in parser["classes"]["names"].split(",") if n.strip()]
        entries = parser["map"]
    except KeyError as exc:
        raise FormatError(f"remap table {path} lacks {exc}") from None
    classes = ClassSet.from_names(names)
    mapping = {}
    for key, value in entries.items():
        value = value.strip()
        try:
            raw = int(key)
        except ValueError:
            raise FormatError(f"remap key {key!r} is not an integer") from None
        mapping[raw] = IGNORE if value.upper() == "IGNORE" else classes.id_of(value)
    return RemapTable(mapping, classes)


def save_remap(path, table: RemapTable):
    parser = configparser.ConfigParser()
    parser["classes"] = {"names": ", ".join(table.classes.names)}
    parser["map"] = {str(raw): ("IGNORE" if cid == IGNORE else table.classes.name_of(cid))
                     for raw, cid in sorted(table.mapping.items())}
    with open(path, "w") as fh:
        parser.write(fh)


def read_scan(path) -> PointCloud:
    size = os.path.getsize(path)
    if size % POINT_BYTES:
        raise FormatError(f"{path}: size {size} is not a multiple of {POINT_BYTES} bytes")
    n = size // POINT_BYTES
    out = np.empty((n, 4), SCAN_DTYPE)
    buf = bytearray(CHUNK_POINTS * POINT_BYTES)
    view = memoryview(buf)
    with open(path, "rb") as fh:
        start = 0
        while start < n:
            got = fh.readinto(view)
            if not got:
                raise FormatError(f"{path}: truncated read at point {start}")
            block = np.frombuffer(buf, SCAN_DTYPE, count=got // 4).reshape(-1, 4)
            bad = ~np.isfinite(block).all(axis=1)
            if bad.any():
                raise DataError(f"{path}: non-finite value at point {start + int(np.argmax(bad))}")
            out[start:start + len(block)] = block
            start += len(block)
    return PointCloud(out[:, :3], out[:, 3])


def write_scan(path, cloud: PointCloud):
    data = np.empty((len(cloud), 4), SCAN_DTYPE)
    data[:, :3] = cloud.coords
    data[:, 3] = cloud.intensity_or_zero()
    with open(path, "wb") as fh:
        fh.write(data.tobytes())


def read_label_words(path) -> np.ndarray:
    size = os.path.getsize(path)
    if size % 4:
        raise FormatError(f"{path}: size {size} is not a multiple of 4 bytes")
    return np.fromfile(path, LABEL_DTYPE)


def read_labels(path, remap: RemapTable) -> LabelSet:
    words = read_label_words(path)
    return LabelSet(remap.apply(words & 0xFFFF), LabelKind.GROUND_TRUTH)


def write_labels(path, labels: LabelSet, inverse_remap: dict):
    ids = labels.labels
    words = np.zeros(len(ids), LABEL_DTYPE)
    for cid in np.unique(ids):
        if int(cid) not in inverse_remap:
            what = "IGNORE" if cid == IGNORE else f"class id {int(cid)}"
            raise RemapError(f"no inverse remap entry for {what}")
        words[ids == cid] = inverse_remap[int(cid)]
    with open(path, "wb") as fh:
        fh.write(words.tobytes())


def pair(cloud: PointCloud, labels: LabelSet, name="") -> Frame:
    if len(labels) != len(cloud):
        raise AlignmentError(f"{name or 'frame'}: {len(labels)} labels for {len(cloud)} points")
    return Frame(cloud, labels, name)


def compute_class_frequency(dataset: Dataset, classes: ClassSet | None = None):
    """Fraction of non-IGNORE points carrying each class, over the whole dataset."""
    counts = {}
    for frame in dataset:
        if frame.labels is None:
            raise StatisticsError(f"frame {frame.name or '?'} has no labels")
        ids, n = np.unique(frame.labels.labels[frame.labels.valid], return_counts=True)
        for cid, k in zip(ids.tolist(), n.tolist()):
            counts[cid] = counts.get(cid, 0) + k
    total = sum(counts.values())
    if total == 0:
        raise StatisticsError("no labeled (non-IGNORE) points to count")
    if classes is not None:
        extra = set(counts) - set(classes.ids)
        if extra:
            raise StatisticsError(f"labels outside class set: {sorted(extra)}")
    return ClassFrequencyDistribution({c: counts[c] / total for c in sorted(counts)})


# -- dataset directories -------------------------------------------------------
#   <root>/velodyne/<frame>.bin
#   <root>/labels/<frame>.label      (optional)

def frame_names(root):
    return sorted(p.stem for p in (Path(root) / "velodyne").glob("*.bin"))


def load_dataset(root, remap: RemapTable | None = None, with_labels=True,
                 names=None, label_dir="labels") -> Dataset:
    root = Path(root)
    names = frame_names(root) if names is None else list(names)
    frames = []
    for name in names:
        cloud = read_scan(root / "velodyne" / f"{name}.bin")
        labels = None
        if with_labels:
            if remap is None:
                raise RemapError("a remap table is required to load labels")
            labels = read_labels(root / label_dir / f"{name}.label", remap)
            frames.append(pair(cloud, labels, name))
        else:
            frames.append(Frame(cloud, None, name))
    return Dataset(frames, root.name)


def save_dataset(root, dataset: Dataset, inverse_remap=None, label_dir="labels"):
    root = Path(root)
    (root / "velodyne").mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(dataset):
        name = frame.name or f"{i:06d}"
        write_scan(root / "velodyne" / f"{name}.bin", frame.cloud)
        if frame.labels is not None and inverse_remap is not None:
            (root / label_dir).mkdir(exist_ok=True)
            write_labels(root / label_dir / f"{name}.label", frame.labels, inverse_remap)
