"""Pointwise MLP segmenter with a soft multiclass Dice loss and manual backprop.

Per-point input features are (x, y, z, range) divided by ``feature_scale``
plus raw intensity (zero when absent). Two tanh hidden layers, linear logits,
softmax. Parameters are kept in float32; all arithmetic runs in float64.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, FormatError, LossError, NumericError
from .types import IGNORE, LabelSet, PointCloud

N_FEATURES = 5
DICE_EPS = 1.0


@dataclass
class ModelParams:
    """Weights ``(fan_in, fan_out)`` and biases for each dense layer."""

    weights: list
    biases: list
    feature_scale: float = 10.0

    @property
    def shapes(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w.shape, b.shape]
        return out

    @property
    def n_classes(self):
        return self.weights[-1].shape[1]

    @property
    def size(self):
        return sum(int(np.prod(s)) for s in self.shapes)

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec, dtype=None):
        """New params with the same shapes, filled from ``vec``."""
        dtype = dtype or self.weights[0].dtype
        vec = np.asarray(vec)
        if vec.size != self.size:
            raise AlignmentError(f"flat vector has {vec.size} entries, expected {self.size}")
        arrays, pos = [], 0
        for shape in self.shapes:
            n = int(np.prod(shape))
            arrays.append(vec[pos:pos + n].reshape(shape).astype(dtype))
            pos += n
        return ModelParams(arrays[0::2], arrays[1::2], self.feature_scale)

    def copy(self):
        return self.with_flat(self.flat())

    def astype(self, dtype):
        return self.with_flat(self.flat(), dtype)

    def same_shape(self, other):
        return self.shapes == other.shapes

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (self.same_shape(other) and self.feature_scale == other.feature_scale
                and all(a.dtype == b.dtype and np.array_equal(a, b)
                        for a, b in zip(self.arrays(), other.arrays())))


@dataclass
class LossValue:
    loss: float
    grad: np.ndarray = field(repr=False)


def init_params(n_classes, rng, hidden=64, feature_scale=10.0, dtype=np.float32):
    """Glorot-uniform weights, zero biases."""
    sizes = [N_FEATURES, hidden, hidden, n_classes]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype))
    return ModelParams(weights, biases, float(feature_scale))


def zero_params(n_classes, hidden=64, feature_scale=10.0, dtype=np.float32):
    p = init_params(n_classes, np.random.default_rng(0), hidden, feature_scale, dtype)
    return p.with_flat(np.zeros(p.size))


def features(cloud: PointCloud, feature_scale):
    xyz = cloud.coords.astype(np.float64)
    rng_ = np.linalg.norm(xyz, axis=1, keepdims=True)
    geo = np.hstack([xyz, rng_]) / feature_scale
    return np.hstack([geo, cloud.intensity_or_zero().astype(np.float64)[:, None]])


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(params: ModelParams, cloud: PointCloud):
    acts = [features(cloud, params.feature_scale)]
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        with np.errstate(over="ignore", invalid="ignore"):
            z = acts[-1] @ w.astype(np.float64) + b.astype(np.float64)
            if i < n_layers - 1:
                z = np.tanh(z)
        if not np.isfinite(z).all():
            raise NumericError(f"non-finite activation in layer {i}")
        acts.append(z)
    return acts, _softmax(acts[-1])


def forward(params: ModelParams, cloud: PointCloud) -> np.ndarray:
    """Per-point class probabilities, shape (N, n_classes)."""
    if len(cloud) == 0:
        return np.zeros((0, params.n_classes))
    return _forward(params, cloud)[1]


def predict(params: ModelParams, cloud: PointCloud, class_ids=None) -> LabelSet:
    best = forward(params, cloud).argmax(axis=1) if len(cloud) else np.zeros(0, int)
    ids = best if class_ids is None else np.asarray(class_ids)[best]
    return LabelSet(ids)


def _columns(labels: LabelSet, n_classes, class_ids):
    lab = labels.labels
    valid = lab != IGNORE
    if class_ids is None:
        cols = lab.astype(np.int64)
    else:
        ids = np.asarray(class_ids)
        order = np.argsort(ids)
        pos = np.clip(np.searchsorted(ids[order], lab), 0, len(ids) - 1)
        hit = ids[order][pos] == lab
        if (valid & ~hit).any():
            raise LossError(f"label {int(lab[valid & ~hit][0])} outside the model's classes")
        cols = np.where(valid, order[pos], -1)
    if valid.any() and (cols[valid].min() < 0 or cols[valid].max() >= n_classes):
        raise LossError(f"label outside [0, {n_classes})")
    return cols, valid


def dice_loss(probs, labels: LabelSet, class_ids=None, all_classes=False,
              eps=DICE_EPS) -> LossValue:
    """Soft Dice loss; ``grad`` is d(loss)/d(probs) with the same shape as probs.

    Averages over classes present in the valid labels, or over every model
    class with ``all_classes``. IGNORE points enter no sum.
    """
    probs = np.asarray(probs, np.float64)
    if len(labels) != len(probs):
        raise AlignmentError(f"{len(labels)} labels for {len(probs)} predictions")
    n_cls = probs.shape[1]
    cols, valid = _columns(labels, n_cls, class_ids)
    if not valid.any():
        raise LossError("every point is IGNORE; Dice loss is undefined")
    p = probs[valid]
    g = np.zeros_like(p)
    g[np.arange(len(p)), cols[valid]] = 1.0
    inter = (p * g).sum(axis=0)
    denom = p.sum(axis=0) + g.sum(axis=0) + eps
    dice = (2.0 * inter + eps) / denom
    use = np.ones(n_cls, bool) if all_classes else g.sum(axis=0) > 0
    k = use.sum()
    loss = 1.0 - dice[use].sum() / k
    dd = (2.0 * g * denom - (2.0 * inter + eps)) / denom**2
    grad = np.zeros_like(probs)
    grad[valid] = -(dd * use) / k
    return LossValue(float(loss), grad)


def backward(params: ModelParams, cloud: PointCloud, labels: LabelSet, class_ids=None,
             all_classes=False) -> LossValue:
    """Dice loss of the network output and its gradient as a flat float64 vector."""
    acts, probs = _forward(params, cloud)
    res = dice_loss(probs, labels, class_ids, all_classes)
    dp = res.grad
    dz = probs * (dp - (probs * dp).sum(axis=1, keepdims=True))
    grads = []
    for i in range(len(params.weights) - 1, -1, -1):
        w = params.weights[i].astype(np.float64)
        grads.append(dz.sum(axis=0))
        grads.append(acts[i].T @ dz)
        if i:
            dz = (dz @ w.T) * (1.0 - acts[i] ** 2)
    grads.reverse()
    return LossValue(res.loss, np.concatenate([g.ravel() for g in grads]))


def sgd_step(params: ModelParams, grad, lr=0.001) -> ModelParams:
    grad = np.asarray(grad, np.float64)
    if grad.size != params.size:
        raise AlignmentError(f"gradient has {grad.size} entries, params have {params.size}")
    return params.with_flat(params.flat().astype(np.float64) - lr * grad)


# -- checkpoints ---------------------------------------------------------------
# magic | u32 version | f64 feature_scale | u32 n_arrays | per array: u32 ndim, u32 dims...
# then every array as little-endian float32, row-major, in layer order (W0, b0, W1, ...).

MAGIC = b"SMXPARAM"
VERSION = 1


def params_to_bytes(params: ModelParams) -> bytes:
    arrays = params.arrays()
    head = [MAGIC, struct.pack("<IdI", VERSION, params.feature_scale, len(arrays))]
    for a in arrays:
        head.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
    payload = [np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays]
    return b"".join(head + payload)


def params_from_bytes(data: bytes) -> ModelParams:
    if data[:len(MAGIC)] != MAGIC:
        raise FormatError("not a parameter checkpoint (bad magic)")
    pos = len(MAGIC)
    try:
        version, scale, n = struct.unpack_from("<IdI", data, pos)
        pos += struct.calcsize("<IdI")
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        shapes = []
        for _ in range(n):
            (ndim,) = struct.unpack_from("<I", data, pos)
            shapes.append(struct.unpack_from(f"<{ndim}I", data, pos + 4))
            pos += 4 + 4 * ndim
    except struct.error as exc:
        raise FormatError(f"truncated checkpoint header: {exc}") from None
    arrays = []
    for shape in shapes:
        nbytes = 4 * int(np.prod(shape))
        if pos + nbytes > len(data):
            raise FormatError("truncated checkpoint payload")
        arrays.append(np.frombuffer(data, "<f4", int(np.prod(shape)), pos)
                      .reshape(shape).astype(np.float32))
        pos += nbytes
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes in checkpoint")
    return ModelParams(arrays[0::2], arrays[1::2], scale)


def save_params(path, params: ModelParams):
    with open(path, "wb") as fh:
        fh.write(params_to_bytes(params))


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read())
