"""Confusion matrix, per-class IoU and mIoU."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, DataError
from .types import IGNORE, ClassSet, LabelSet


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """``counts[p, t]``: points predicted as class column p whose truth is column t."""

    class_ids: tuple
    counts: np.ndarray

    @classmethod
    def empty(cls, class_ids):
        ids = tuple(int(c) for c in class_ids)
        return cls(ids, np.zeros((len(ids), len(ids)), np.int64))

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        if self.class_ids != other.class_ids:
            raise AlignmentError("confusion matrices over different class sets")
        return ConfusionMatrix(self.class_ids, self.counts + other.counts)


def _to_cols(ids, labels):
    lut = {c: j for j, c in enumerate(ids)}
    uniq = np.unique(labels)
    unknown = [int(u) for u in uniq if int(u) not in lut]
    if unknown:
        raise DataError(f"labels outside class set: {unknown}")
    out = np.empty(len(labels), np.int64)
    for u in uniq:
        out[labels == u] = lut[int(u)]
    return out


def accumulate(cm: ConfusionMatrix, predictions: LabelSet, truth: LabelSet) -> ConfusionMatrix:
    pred = np.asarray(predictions.labels)
    true = np.asarray(truth.labels)
    if len(pred) != len(true):
        raise AlignmentError(f"{len(pred)} predictions for {len(true)} labels")
    keep = true != IGNORE
    pred, true = pred[keep], true[keep]
    if not len(true):
        return cm
    k = len(cm.class_ids)
    idx = _to_cols(cm.class_ids, pred) * k + _to_cols(cm.class_ids, true)
    add = np.bincount(idx, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(cm.class_ids, cm.counts + add)


@dataclass
class IoUReport:
    per_class: dict
    miou: float

    def lines(self, classes: ClassSet | None = None):
        name = (lambda c: classes.name_of(c)) if classes else str
        width = max([len(name(c)) for c in self.per_class] + [5])
        out = [f"{'class':<{width}}  IoU"]
        for c, v in self.per_class.items():
            out.append(f"{name(c):<{width}}  {v:.4f}")
        out.append(f"{'mIoU':<{width}}  {self.miou:.4f}")
        return out

    def table(self, classes=None):
        return "\n".join(self.lines(classes)) + "\n"

    def key_values(self, classes=None):
        name = (lambda c: classes.name_of(c)) if classes else str
        kv = {f"iou.{name(c)}": f"{v:.6f}" for c, v in self.per_class.items()}
        kv["miou"] = f"{self.miou:.6f}"
        return "".join(f"{k}={v}\n" for k, v in kv.items())


def iou(cm: ConfusionMatrix) -> IoUReport:
    """IoU_c = TP / (TP + FP + FN); classes with an empty union are left out."""
    tp = np.diag(cm.counts).astype(np.float64)
    fp = cm.counts.sum(axis=1) - tp
    fn = cm.counts.sum(axis=0) - tp
    union = tp + fp + fn
    per_class = {c: float(tp[j] / union[j]) for j, c in enumerate(cm.class_ids) if union[j] > 0}
    miou = float(np.mean(list(per_class.values()))) if per_class else float("nan")
    return IoUReport(per_class, miou)
