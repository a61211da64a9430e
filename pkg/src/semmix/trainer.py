"""Source pretraining, SSDA finetuning, and teacher-student adaptation."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError
from .kitti import compute_class_frequency
from .metrics import ConfusionMatrix, IoUReport, accumulate, iou
from .mixing import (GlobalAugConfig, LocalAugConfig, global_augment_r, mix_s_to_t,
                     mix_t_to_s)
from .model import ModelParams, backward, forward, init_params, predict, sgd_step
from .selection import (SelectionConfig, filter_pseudo_labels_g, pseudo_coverage,
                        select_classes_f, select_pseudo_patches, select_supervised_target)
from .types import Dataset, Frame

log = logging.getLogger(__name__)

MODES = ("pretrain", "finetune", "uda", "ssda")


@dataclass(frozen=True)
class Toggles:
    branch_s_to_t: bool = True
    branch_t_to_s: bool = True
    local_aug: bool = True
    global_aug: bool = True
    ema: bool = True
    weighted_f: bool = True

    @classmethod
    def names(cls):
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 0.99
    gamma: int = 1
    epochs: int = 10
    pretrain_epochs: int = 10
    finetune_epochs: int = 2
    batch_size: int = 4
    lr: float = 0.001
    hidden: int = 64
    feature_scale: float = 10.0
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    local_aug: LocalAugConfig = field(default_factory=LocalAugConfig)
    global_aug: GlobalAugConfig = field(default_factory=GlobalAugConfig)
    mode: str = "uda"
    toggles: Toggles = field(default_factory=Toggles)
    # classes-present Dice mean by default; True averages over every class
    dice_all_classes: bool = False
    # None: every confident pseudo-labeled point forms a target patch
    target_class_ratio: Optional[float] = None
    pretrain_global_aug: bool = False
    eval_teacher: bool = False

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta={self.beta} must lie in [0, 1]")
        if self.gamma < 1:
            raise ConfigError(f"gamma={self.gamma} must be >= 1")
        if self.batch_size < 1 or self.epochs < 0 or self.pretrain_epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epoch counts >= 0")
        if self.mode not in MODES:
            raise ConfigError(f"mode {self.mode!r} not in {MODES}")


@dataclass
class TrainStats:
    iterations: list = field(default_factory=list)
    epochs: list = field(default_factory=list)

    def column(self, key):
        return np.array([r[key] for r in self.iterations])


def ema_update(teacher: ModelParams, student: ModelParams, beta) -> ModelParams:
    """teacher <- beta * teacher + (1 - beta) * student, elementwise."""
    if not teacher.same_shape(student):
        raise ConfigError("teacher and student parameter shapes differ")
    t = teacher.flat().astype(np.float64)
    s = student.flat().astype(np.float64)
    return teacher.with_flat(beta * t + (1.0 - beta) * s)


def evaluate(params: ModelParams, dataset: Dataset, class_ids) -> IoUReport:
    cm = ConfusionMatrix.empty(class_ids)
    for frame in dataset:
        if frame.labels is None:
            raise DataError(f"frame {frame.name or '?'} has no labels to evaluate against")
        cm = accumulate(cm, predict(params, frame.cloud, class_ids), frame.labels)
    return iou(cm)


def _batches(order, size):
    for i in range(0, len(order), size):
        yield order[i:i + size]


def _branch_loss(params, sample_frame: Frame, class_ids, all_classes):
    if sample_frame.labels is None or not sample_frame.labels.valid.any():
        return 0.0, np.zeros(params.size)
    res = backward(params, sample_frame.cloud, sample_frame.labels, class_ids, all_classes)
    return res.loss, res.grad


def _check_labeled(ds: Dataset, what):
    if len(ds) == 0:
        raise DataError(f"{what} dataset is empty")
    if not ds.is_labeled:
        raise DataError(f"{what} dataset must be fully labeled")


def pretrain(source: Dataset, cfg: TrainConfig, rng, params: ModelParams | None = None,
             class_ids=None, epochs=None, val: Dataset | None = None, stats=None):
    """Plain Dice-loss training on labeled frames."""
    _check_labeled(source, "source")
    n_classes = len(class_ids) if class_ids is not None else None
    if params is None:
        if n_classes is None:
            raise ConfigError("class_ids are required to initialize a new model")
        params = init_params(n_classes, rng, cfg.hidden, cfg.feature_scale)
    epochs = cfg.pretrain_epochs if epochs is None else epochs
    for ep in range(epochs):
        order = rng.permutation(len(source))
        losses = []
        for batch in _batches(order, cfg.batch_size):
            grad = np.zeros(params.size)
            for i in batch:
                frame = source[int(i)]
                if cfg.pretrain_global_aug:
                    frame = global_augment_r(frame, cfg.global_aug, rng)
                loss, g = _branch_loss(params, frame, class_ids, cfg.dice_all_classes)
                grad += g
                losses.append(loss)
            params = sgd_step(params, grad / len(batch), cfg.lr)
        rec = {"epoch": ep, "loss": float(np.mean(losses))}
        if val is not None and class_ids is not None:
            rec["val_miou"] = evaluate(params, val, class_ids).miou
        log.info("pretrain epoch %d loss %.4f", ep, rec["loss"])
        if stats is not None:
            stats.epochs.append(rec)
    return params


def finetune_ssda(params: ModelParams, source: Dataset, target_l: Dataset, cfg: TrainConfig,
                  rng, class_ids=None, stats=None):
    """Continue training on source plus labeled target frames (duplicates dropped)."""
    if len(target_l) == 0:
        raise DataError("SSDA finetuning needs at least one labeled target frame")
    _check_labeled(target_l, "labeled target")
    extra = [f for f in target_l if not any(f == s for s in source)]
    union = Dataset(list(source.frames) + extra, "union")
    return pretrain(union, cfg, rng, params, class_ids, epochs=cfg.finetune_epochs, stats=stats)


class _Writer:
    def __init__(self, path):
        self.fh = open(path, "w") if path else None

    def write(self, rec):
        if self.fh:
            self.fh.write(json.dumps(rec) + "\n")
            self.fh.flush()

    def close(self):
        if self.fh:
            self.fh.close()


def adapt(params: ModelParams, source: Dataset, target_u: Dataset, cfg: TrainConfig, rng,
          class_ids, target_l: Dataset | None = None, val: Dataset | None = None,
          stats_path=None, checkpoint_cb=None):
    """Teacher-student adaptation with both mixing branches.

    Returns ``(student_params, TrainStats)``. Labeled target frames, when given
    and non-empty, also contribute supervised patches to both branches.
    """
    _check_labeled(source, "source")
    if len(target_u) == 0:
        raise DataError("unlabeled target dataset is empty")
    tg = cfg.toggles
    stats = TrainStats()
    if not (tg.branch_s_to_t or tg.branch_t_to_s):
        log.warning("both mixing branches disabled; parameters are returned unchanged")
        return params.copy(), stats
    sup_set = target_l if target_l is not None and len(target_l) else None
    if sup_set is not None:
        _check_labeled(sup_set, "labeled target")
    dist = compute_class_frequency(source)
    sel = cfg.selection
    student = params.copy()
    teacher = params.copy()
    writer = _Writer(stats_path)
    it = 0
    try:
        for ep in range(cfg.epochs):
            order = rng.permutation(len(target_u))
            cover = []
            for batch in _batches(order, cfg.batch_size):
                it += 1
                item_rngs = rng.spawn(len(batch))
                g_tot = np.zeros(student.size)
                l_st = l_ts = 0.0
                cov = []
                for ti, r in zip(batch, item_rngs):
                    tgt = target_u[int(ti)]
                    src = source[int(r.integers(len(source)))]
                    pseudo = filter_pseudo_labels_g(forward(teacher, tgt.cloud), sel.zeta,
                                                    class_ids)
                    cov.append(pseudo_coverage(pseudo))
                    sup = None
                    if sup_set is not None:
                        lf = sup_set[int(r.integers(len(sup_set)))]
                        sup = (lf, select_supervised_target(lf.labels, dist, sel.mu, r,
                                                            tg.weighted_f))
                    kw = dict(local_cfg=cfg.local_aug, global_cfg=cfg.global_aug, rng=r,
                              local_aug=tg.local_aug, global_aug=tg.global_aug)
                    if tg.branch_s_to_t:
                        sel_src = select_classes_f(src.labels, dist, sel.alpha, r, tg.weighted_f)
                        mixed = mix_s_to_t(src, sel_src, tgt, pseudo, sup, **kw)
                        loss, g = _branch_loss(student, mixed.frame, class_ids,
                                               cfg.dice_all_classes)
                        l_st += loss
                        g_tot += g
                    if tg.branch_t_to_s:
                        psel = select_pseudo_patches(pseudo, dist, cfg.target_class_ratio, r,
                                                     tg.weighted_f)
                        mixed = mix_t_to_s(tgt, pseudo, psel, src, sup, **kw)
                        loss, g = _branch_loss(student, mixed.frame, class_ids,
                                               cfg.dice_all_classes)
                        l_ts += loss
                        g_tot += g
                nb = len(batch)
                student = sgd_step(student, g_tot / nb, cfg.lr)
                updated = tg.ema and it % cfg.gamma == 0
                if updated:
                    teacher = ema_update(teacher, student, cfg.beta)
                rec = {"iteration": it, "epoch": ep, "loss_s_to_t": l_st / nb,
                       "loss_t_to_s": l_ts / nb, "loss_tot": l_st / nb + l_ts / nb,
                       "coverage": float(np.mean(cov)), "teacher_updated": bool(updated)}
                stats.iterations.append(rec)
                writer.write(rec)
                cover += cov
            erec = {"epoch": ep, "coverage": float(np.mean(cover))}
            if val is not None:
                net = teacher if cfg.eval_teacher else student
                erec["val_miou"] = evaluate(net, val, class_ids).miou
            stats.epochs.append(erec)
            log.info("adapt epoch %d %s", ep, erec)
            if checkpoint_cb is not None:
                checkpoint_cb(ep, student, teacher)
    finally:
        writer.close()
    return student, stats
