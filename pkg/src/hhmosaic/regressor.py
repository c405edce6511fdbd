"""Homography regressor: shared conv stem, non-local fusion head, FC regression head.

Query, key and value patches go through the same convolutional stem; the
fusion head combines the three deepest feature maps and the flattened result
is regressed to the six corner displacements ``(dx1, dx2, dx3, dy1, dy2, dy3)``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError, FormatError, TrainingDivergedError
from .fusion import FusionHead, Neighborhood, fuse_backward_cached, fuse_forward
from .homography import PatchCorners, ThreePointDelta, deltas_from_affine
from .imageio import atomic_write
from .layers import Conv2D, Dense, FeatureNorm, MaxPool2, ReLU
from .pig import PigRecord
from .rng import stream


@dataclass(frozen=True)
class ModelConfig:
    patch: int = 64
    channels: tuple[int, ...] = (8, 8, 16, 16)
    pool_after: tuple[int, ...] = (1, 3)
    embed: int = 8
    hidden: int = 64
    neighborhood: Neighborhood = "eight_neighbor"
    standardize: bool = False  # per-patch zero-mean/unit-variance input

    @property
    def feature_size(self) -> int:
        return self.patch // (2 ** len(self.pool_after))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    momentum: float = 0.9
    batch: int = 16
    epochs: int = 50
    seed: int = 0
    patch: int = 64
    max_iters: int | None = None

    def __post_init__(self):
        if not self.lr >= 0:  # lr = 0 is accepted as a frozen-model run
            raise ValueError("lr must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch < 1 or self.epochs < 0:
            raise ValueError("batch must be >= 1 and epochs >= 0")


@dataclass
class RegressorModel:
    config: ModelConfig
    stem: list[Conv2D]
    fusion: FusionHead
    head: list[Dense]
    hyper: dict = field(default_factory=dict)

    @classmethod
    def build(cls, config: ModelConfig = ModelConfig(), seed: int = 0) -> "RegressorModel":
        if config.patch % (2 ** len(config.pool_after)):
            raise DimensionError("patch size must be divisible by the total pooling factor")
        rng = stream(seed, 4)
        stem, c_in = [], 1
        for c_out in config.channels:
            stem.append(Conv2D.init(c_in, c_out, rng))
            c_in = c_out
        fusion = FusionHead.init(c_in, config.embed, rng, config.neighborhood)
        flat = c_in * config.feature_size ** 2
        head = [Dense.init(flat, config.hidden, rng), Dense.init(config.hidden, 6, rng, zero=True)]
        return cls(config, stem, fusion, head)

    def params(self) -> list[np.ndarray]:
        """All parameter arrays in declaration order (the checkpoint order)."""
        out: list[np.ndarray] = []
        for conv in self.stem:
            out += conv.params()
        out += [self.fusion.w_theta, self.fusion.w_phi, self.fusion.w_g]
        for fc in self.head:
            out += fc.params()
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "RegressorModel":
        m = RegressorModel(self.config,
                           [Conv2D(c.weight.copy(), c.bias.copy()) for c in self.stem],
                           FusionHead(self.fusion.w_theta.copy(), self.fusion.w_phi.copy(),
                                      self.fusion.w_g.copy(), self.fusion.neighborhood),
                           [Dense(d.weight.copy(), d.bias.copy()) for d in self.head],
                           dict(self.hyper))
        return m


def _prepare(model: RegressorModel, *patches) -> np.ndarray:
    arrs = [np.asarray(p, dtype=np.float64) for p in patches]
    shape = arrs[0].shape
    if any(a.shape != shape for a in arrs):
        raise DimensionError("query, key and value patches must share one shape")
    if len(shape) == 2:
        arrs = [a[None] for a in arrs]
    n, h, w = arrs[0].shape
    if h != w or h != model.config.patch:
        raise DimensionError(f"model expects {model.config.patch}x{model.config.patch} patches, got {h}x{w}")
    x = np.concatenate(arrs)[:, None]
    if model.config.standardize:
        mu = x.mean(axis=(2, 3), keepdims=True)
        sd = x.std(axis=(2, 3), keepdims=True)
        x = (x - mu) / np.maximum(sd, 1e-6)
    return x


def forward_batch(model: RegressorModel, q, k, v):
    """Predictions (N, 6) for batched (N, H, W) patches, plus the backward cache."""
    x = _prepare(model, q, k, v)
    caches = []
    for i, conv in enumerate(model.stem):
        x, cc = conv.forward(x)
        x, rc = ReLU.forward(x)
        pc = None
        if i in model.config.pool_after:
            x, pc = MaxPool2.forward(x)
        caches.append((cc, rc, pc))
    n = x.shape[0] // 3
    fused, fcache = fuse_forward(model.fusion, x[:n], x[n:2 * n], x[2 * n:])
    h, nc = FeatureNorm.forward(fused.reshape(n, -1))
    h1, c1 = model.head[0].forward(h)
    a1, r1 = ReLU.forward(h1)
    out, c2 = model.head[1].forward(a1)
    return out, (caches, fused.shape, fcache, nc, c1, r1, c2, a1)


def forward(model: RegressorModel, q, k, v) -> ThreePointDelta:
    """Predicted corner displacements for one query/key/value patch triple."""
    out, _ = forward_batch(model, q, k, v)
    return ThreePointDelta.from_vector(out[0])


def backward_batch(model: RegressorModel, cache, grad_out: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients for an upstream gradient on the (N, 6) predictions."""
    caches, fshape, fcache, nc, c1, r1, c2, _ = cache
    ga1, g_fc2 = model.head[1].backward(c2, grad_out)
    gh, g_fc1 = model.head[0].backward(c1, ReLU.backward(r1, ga1))
    gf = fuse_backward_cached(model.fusion, fcache, FeatureNorm.backward(nc, gh).reshape(fshape))
    gx = np.concatenate([gf["q"], gf["k"], gf["v"]])
    g_stem: list[list[np.ndarray]] = []
    for conv, (cc, rc, pc) in zip(reversed(model.stem), reversed(caches)):
        if pc is not None:
            gx = MaxPool2.backward(pc, gx)
        gx, gp = conv.backward(cc, ReLU.backward(rc, gx))
        g_stem.append(gp)
    grads: list[np.ndarray] = []
    for gp in reversed(g_stem):
        grads += gp
    grads += [gf["w_theta"], gf["w_phi"], gf["w_g"]]
    return grads + g_fc1 + g_fc2


def euclidean_loss(pred, truth) -> float:
    """Half the squared distance between two 6-vectors (or ThreePointDeltas)."""
    p = pred.as_vector() if isinstance(pred, ThreePointDelta) else np.asarray(pred, dtype=np.float64)
    t = truth.as_vector() if isinstance(truth, ThreePointDelta) else np.asarray(truth, dtype=np.float64)
    return 0.5 * float(np.sum((p - t) ** 2))


def batch_loss_and_grads(model: RegressorModel, q, k, v, targets) -> tuple[float, list[np.ndarray]]:
    """Mean Euclidean loss over the batch and its parameter gradients."""
    targets = np.asarray(targets, dtype=np.float64)
    pred, cache = forward_batch(model, q, k, v)
    resid = pred - targets
    n = len(targets)
    loss = 0.5 * float(np.sum(resid**2)) / n
    return loss, backward_batch(model, cache, resid / n)


def backward(model: RegressorModel, triple, truth) -> list[np.ndarray]:
    """Gradient of :func:`euclidean_loss` for one (q, k, v) triple w.r.t. every parameter."""
    q, k, v = triple
    t = truth.as_vector() if isinstance(truth, ThreePointDelta) else np.asarray(truth, dtype=np.float64)
    return batch_loss_and_grads(model, q, k, v, t[None])[1]


# --- training -------------------------------------------------------------

def record_target(rec: PigRecord) -> np.ndarray:
    h, w = rec.frame_a.shape
    return deltas_from_affine(PatchCorners.rectangle(w, h), rec.truth).as_vector()


def record_triple(rec: PigRecord) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(query, key, value) for a training pair: the perturbed frame queries, the original is the template."""
    return rec.frame_b, rec.frame_a, rec.frame_a


def _stack(records: Sequence[PigRecord]):
    trip = [record_triple(r) for r in records]
    q, k, v = (np.stack(x) for x in zip(*trip))
    return q, k, v, np.stack([record_target(r) for r in records])


def corner_errors(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Mean distance over the four patch corners, per sample, for (N, 6) displacement vectors."""
    d = np.asarray(pred) - np.asarray(truth)
    dx, dy = d[:, :3], d[:, 3:]
    dx4 = dx[:, 0] + dx[:, 2] - dx[:, 1]
    dy4 = dy[:, 0] + dy[:, 2] - dy[:, 1]
    e = np.concatenate([np.hypot(dx, dy), np.hypot(dx4, dy4)[:, None]], axis=1)
    return e.mean(axis=1)


def predict_records(model: RegressorModel, records: Sequence[PigRecord], chunk: int = 32) -> np.ndarray:
    out = []
    for s in range(0, len(records), chunk):
        q, k, v, _ = _stack(records[s:s + chunk])
        out.append(forward_batch(model, q, k, v)[0])
    return np.concatenate(out) if out else np.zeros((0, 6))


def mean_corner_error(model: RegressorModel, records: Sequence[PigRecord]) -> float:
    if not records:
        return float("nan")
    truth = np.stack([record_target(r) for r in records])
    return float(corner_errors(predict_records(model, records), truth).mean())


def _finite(arrs) -> bool:
    return all(np.isfinite(a).all() for a in arrs)


def train(model: RegressorModel, dataset: Sequence[PigRecord], cfg: TrainConfig,
          eval_split: float | Sequence[PigRecord] = 0.0, progress=None):
    """Momentum SGD on the mean Euclidean loss.  Returns (model, per-epoch log).

    ``eval_split`` is either a held-out record list or a fraction of
    ``dataset`` (taken from its end) kept out of training.  The model is
    updated in place and also returned.
    """
    if not dataset:
        raise ValueError("training set is empty")
    if isinstance(eval_split, (int, float)):
        n_eval = int(round(len(dataset) * float(eval_split)))
        train_set, heldout = list(dataset[:len(dataset) - n_eval]), list(dataset[len(dataset) - n_eval:])
    else:
        train_set, heldout = list(dataset), list(eval_split)
    if not train_set:
        raise ValueError("no training records left after the held-out split")
    model.hyper = {"lr": cfg.lr, "momentum": cfg.momentum, "batch": cfg.batch,
                   "epochs": cfg.epochs, "seed": cfg.seed, "max_iters": cfg.max_iters}
    params = model.params()
    velocity = [np.zeros_like(p) for p in params]
    log = [{"epoch": 0, "iterations": 0, "train_loss": float("nan"),
            "heldout_corner_px": mean_corner_error(model, heldout)}]
    it, n = 0, len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        if cfg.max_iters is not None and it >= cfg.max_iters:
            break
        order = stream(cfg.seed, 3, epoch).permutation(n)
        losses = []
        for s in range(0, n, cfg.batch):
            if cfg.max_iters is not None and it >= cfg.max_iters:
                break
            q, k, v, t = _stack([train_set[i] for i in order[s:s + cfg.batch]])
            loss, grads = batch_loss_and_grads(model, q, k, v, t)
            it += 1
            if not math.isfinite(loss) or not _finite(grads):
                raise TrainingDivergedError(epoch, it)
            for p, g, vel in zip(params, grads, velocity):
                vel *= cfg.momentum
                vel -= cfg.lr * g
                p += vel
            if not _finite(params):
                raise TrainingDivergedError(epoch, it)
            losses.append(loss)
        entry = {"epoch": epoch, "iterations": it, "train_loss": float(np.mean(losses)) if losses else float("nan"),
                 "heldout_corner_px": mean_corner_error(model, heldout)}
        log.append(entry)
        if progress is not None:
            progress(entry)
    return model, log


# --- checkpoint -------------------------------------------------------------

MAGIC = b"HHEN"
VERSION = 1
LAYER_STANDARDIZE, LAYER_CONV, LAYER_POOL, LAYER_FUSION_EIGHT, LAYER_FUSION_ALL, LAYER_DENSE, LAYER_FEATURE_NORM = \
    1, 2, 3, 4, 5, 6, 7


def _descriptor(model: RegressorModel) -> list[tuple[int, list[tuple[int, ...]]]]:
    layers: list[tuple[int, list[tuple[int, ...]]]] = []
    if model.config.standardize:
        layers.append((LAYER_STANDARDIZE, []))
    for i, conv in enumerate(model.stem):
        layers.append((LAYER_CONV, [conv.weight.shape, conv.bias.shape]))
        if i in model.config.pool_after:
            layers.append((LAYER_POOL, []))
    f = model.fusion
    kind = LAYER_FUSION_EIGHT if f.neighborhood == "eight_neighbor" else LAYER_FUSION_ALL
    layers.append((kind, [f.w_theta.shape, f.w_phi.shape, f.w_g.shape]))
    layers.append((LAYER_FEATURE_NORM, []))
    for fc in model.head:
        layers.append((LAYER_DENSE, [fc.weight.shape, fc.bias.shape]))
    return layers


def to_bytes(model: RegressorModel) -> bytes:
    desc = _descriptor(model)
    out = [MAGIC, struct.pack("<II", VERSION, len(desc))]
    for kind, shapes in desc:
        out.append(struct.pack("<II", kind, len(shapes)))
        for shp in shapes:
            out.append(struct.pack(f"<I{len(shp)}I", len(shp), *shp))
    for p in model.params():
        out.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("checkpoint is truncated")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def from_bytes(data: bytes) -> RegressorModel:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("not a model checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (this build reads version {VERSION})")
    desc = []
    for _ in range(r.u32()):
        kind, n_arrays = r.u32(), r.u32()
        shapes = [tuple(r.u32() for _ in range(r.u32())) for _ in range(n_arrays)]
        desc.append((kind, shapes))
    arrays = []
    for _, shapes in desc:
        for shp in shapes:
            count = int(np.prod(shp))
            arrays.append(np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shp))
    if r.pos != len(data):
        raise FormatError("trailing bytes after checkpoint parameters")
    return _assemble(desc, arrays)


def _assemble(desc, arrays) -> RegressorModel:
    it = iter(arrays)
    stem, head, pools, fusion, standardize, normed = [], [], [], None, False, False
    try:
        for kind, shapes in desc:
            if kind == LAYER_STANDARDIZE:
                standardize = True
            elif kind == LAYER_CONV:
                stem.append(Conv2D(next(it), next(it)))
            elif kind == LAYER_POOL:
                pools.append(len(stem) - 1)
            elif kind in (LAYER_FUSION_EIGHT, LAYER_FUSION_ALL):
                nb = "eight_neighbor" if kind == LAYER_FUSION_EIGHT else "all_positions"
                fusion = FusionHead(next(it), next(it), next(it), nb)
            elif kind == LAYER_FEATURE_NORM:
                normed = True
            elif kind == LAYER_DENSE:
                head.append(Dense(next(it), next(it)))
            else:
                raise FormatError(f"unknown layer type {kind}")
    except StopIteration:
        raise FormatError("checkpoint descriptor does not match its parameters") from None
    if fusion is None or not normed or not stem or len(head) != 2 or head[-1].weight.shape[0] != 6:
        raise FormatError("checkpoint does not describe a homography regressor")
    feat = int(round(math.sqrt(head[0].weight.shape[1] / stem[-1].weight.shape[0])))
    cfg = ModelConfig(patch=feat * 2 ** len(pools), channels=tuple(c.weight.shape[0] for c in stem),
                      pool_after=tuple(pools), embed=fusion.w_theta.shape[0], hidden=head[0].weight.shape[0],
                      neighborhood=fusion.neighborhood, standardize=standardize)
    return RegressorModel(cfg, stem, fusion, head)


def save(model: RegressorModel, path):
    atomic_write(Path(path), to_bytes(model))


def load(path) -> RegressorModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    return from_bytes(data)

