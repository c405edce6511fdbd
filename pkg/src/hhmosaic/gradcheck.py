"""Central finite-difference checks for every layer type and the full regressor."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fusion import FrameTriple, FusionHead, fuse, fuse_backward
from .layers import Conv2D, Dense, FeatureNorm, MaxPool2, ReLU
from .regressor import ModelConfig, RegressorModel, batch_loss_and_grads, forward_batch
from .rng import stream

STEP = 1e-5
TOLERANCE = 1e-4


def relative_error(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = STEP,
                 pattern: Callable[[], bytes] | None = None) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. the array ``x``, perturbed in place.

    With ``pattern`` (a fingerprint of the piecewise-linear switches), an entry
    whose central stencil crosses a switch uses the second-order one-sided
    stencil on the side that stays on the base point's smooth piece.
    """
    g = np.zeros_like(x)
    base_p = pattern() if pattern is not None else None

    def at(idx, orig, step):
        x[idx] = orig + step
        val, same = f(), pattern is None or pattern() == base_p
        x[idx] = orig
        return val, same

    for idx in np.ndindex(x.shape):
        orig = x[idx]
        fp, same_p = at(idx, orig, h)
        fm, same_m = at(idx, orig, -h)
        g[idx] = (fp - fm) / (2 * h)
        if same_p and same_m:
            continue
        for side, f1, ok in ((1.0, fp, same_p), (-1.0, fm, same_m)):
            f2, ok2 = at(idx, orig, 2 * side * h)
            if ok and ok2:
                g[idx] = side * (-3 * f() + 4 * f1 - f2) / (2 * h)
                break
    return g


@dataclass
class CheckResult:
    name: str
    worst: float
    n_params: int

    @property
    def ok(self) -> bool:
        return self.worst < TOLERANCE


def _worst(f, arrays, analytic, h) -> float:
    return max(float(relative_error(numeric_grad(f, a, h), g).max()) for a, g in zip(arrays, analytic))


def check_conv(rng, h=STEP) -> CheckResult:
    layer = Conv2D.init(2, 3, rng)
    layer.bias[:] = rng.normal(size=3)
    x = rng.normal(size=(2, 2, 5, 5))
    up = rng.normal(size=(2, 3, 5, 5))
    f = lambda: float((layer.forward(x)[0] * up).sum())
    _, cache = layer.forward(x)
    gx, gp = layer.backward(cache, up)
    return CheckResult("conv2d", _worst(f, [x, *layer.params()], [gx, *gp], h), layer.weight.size + layer.bias.size)


def check_relu(rng, h=STEP) -> CheckResult:
    x = rng.normal(size=(2, 3, 4, 4))
    x[np.abs(x) < 10 * h] += 0.1  # keep samples off the kink
    up = rng.normal(size=x.shape)
    f = lambda: float((ReLU.forward(x)[0] * up).sum())
    return CheckResult("relu", _worst(f, [x], [ReLU.backward(ReLU.forward(x)[1], up)], h), 0)


def check_maxpool(rng, h=STEP) -> CheckResult:
    x = rng.permutation(2 * 3 * 4 * 4).reshape(2, 3, 4, 4) * 0.01 + rng.normal(0, 1e-4, (2, 3, 4, 4))
    up = rng.normal(size=(2, 3, 2, 2))
    f = lambda: float((MaxPool2.forward(x)[0] * up).sum())
    return CheckResult("maxpool2", _worst(f, [x], [MaxPool2.backward(MaxPool2.forward(x)[1], up)], h), 0)


def check_dense(rng, h=STEP) -> CheckResult:
    layer = Dense.init(5, 4, rng)
    layer.bias[:] = rng.normal(size=4)
    x = rng.normal(size=(3, 5))
    up = rng.normal(size=(3, 4))
    f = lambda: float((layer.forward(x)[0] * up).sum())
    gx, gp = layer.backward(x, up)
    return CheckResult("dense", _worst(f, [x, *layer.params()], [gx, *gp], h), layer.weight.size + layer.bias.size)


def check_feature_norm(rng, h=STEP) -> CheckResult:
    x = rng.normal(size=(3, 7))
    up = rng.normal(size=x.shape)
    f = lambda: float((FeatureNorm.forward(x)[0] * up).sum())
    g = FeatureNorm.backward(FeatureNorm.forward(x)[1], up)
    return CheckResult("feature_norm", _worst(f, [x], [g], h), 0)


def check_fusion(rng, neighborhood, h=STEP) -> CheckResult:
    head = FusionHead.init(3, 2, rng, neighborhood)
    x = FrameTriple(*rng.normal(size=(3, 3, 4, 5)))
    up = rng.normal(size=(3, 4, 5))
    f = lambda: float((fuse(head, x) * up).sum())
    g = fuse_backward(head, x, up)
    arrays = [head.w_theta, head.w_phi, head.w_g, x.q, x.k, x.v]
    analytic = [g[k] for k in ("w_theta", "w_phi", "w_g", "q", "k", "v")]
    return CheckResult(f"fusion[{neighborhood}]", _worst(f, arrays, analytic, h),
                       head.w_theta.size + head.w_phi.size + head.w_g.size)


def tiny_regressor_config() -> ModelConfig:
    """Small but complete architecture: every layer type, well under 10^4 parameters."""
    return ModelConfig(patch=16, channels=(4, 4, 6, 6), pool_after=(1, 3), embed=3, hidden=12)


def activation_pattern(model: RegressorModel, q, k, v) -> bytes:
    """Every ReLU mask and max-pool winner of one forward pass, packed for comparison."""
    _, cache = forward_batch(model, q, k, v)
    parts = []
    for _, relu_mask, pool in cache[0]:
        parts.append(np.packbits(relu_mask).tobytes())
        if pool is not None:
            parts.append(pool[1].astype(np.uint8).tobytes())
    parts.append(np.packbits(cache[5]).tobytes())
    return b"".join(parts)


def check_regressor(rng, h=STEP, neighborhood="eight_neighbor", seed: int = 0) -> CheckResult:
    model = RegressorModel.build(tiny_regressor_config(), seed)
    model.fusion.neighborhood = neighborhood
    # the zero-initialised output layer would hide every upstream gradient
    model.head[-1].weight[:] = rng.normal(0.0, 0.5, model.head[-1].weight.shape)
    p = model.config.patch
    q, k, v = rng.uniform(0, 1, (3, 2, p, p))
    t = rng.normal(0, 5, (2, 6))
    f = lambda: batch_loss_and_grads(model, q, k, v, t)[0]
    pattern = lambda: activation_pattern(model, q, k, v)
    _, grads = batch_loss_and_grads(model, q, k, v, t)
    worst = max(float(relative_error(numeric_grad(f, a, h, pattern), g).max())
                for a, g in zip(model.params(), grads))
    return CheckResult(f"regressor[{neighborhood}]", worst, model.n_params())


def run_suite(seed: int = 1, h: float = STEP) -> list[CheckResult]:
    rng = stream(seed, 5)
    return [
        check_conv(rng, h), check_relu(rng, h), check_maxpool(rng, h), check_dense(rng, h), check_feature_norm(rng, h),
        check_fusion(rng, "eight_neighbor", h), check_fusion(rng, "all_positions", h),
        check_regressor(rng, h, "eight_neighbor", seed), check_regressor(rng, h, "all_positions", seed),
    ]
