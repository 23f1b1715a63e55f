"""Central finite-difference checks of the hand-written backward passes.

The relative error of one coordinate is ``|a - n| / max(|a|, |n|, floor)``
where ``a`` is the analytic and ``n`` the numeric derivative. ``floor``
keeps coordinates whose true derivative is at the level of floating-point
cancellation noise from dominating the report.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .losses import LossWeights
from .model import ModelConfig, compute_loss, init_params

TOLERANCE = 1e-5
FAIL_THRESHOLD = 1e-4
OP_FLOOR = 1e-8
MODEL_FLOOR = 1e-4


@dataclass
class GradReport:
    max_rel_error: dict[str, float]
    checked: dict[str, int]
    tolerance: float = TOLERANCE
    seconds: float = 0.0
    details: dict = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def offenders(self) -> list[str]:
        return [k for k, v in self.max_rel_error.items() if not v < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.offenders

    def lines(self) -> list[str]:
        out = []
        for name, err in self.max_rel_error.items():
            flag = "ok  " if err < self.tolerance else "FAIL"
            out.append(f"{flag} {name:<28s} coords={self.checked[name]:<5d} max_rel_err={err:.3e}")
        return out


def rel_error(analytic, numeric, floor: float) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def check_function(fn: Callable[..., T.Tensor], inputs: dict[str, np.ndarray], eps: float = 1e-5,
                   floor: float = OP_FLOOR, max_coords: int | None = None, seed: int = 0,
                   tolerance: float = TOLERANCE) -> GradReport:
    """Compare ``fn``'s taped gradients to central differences for every input.

    ``fn`` receives the inputs as keyword tensors and returns a scalar tensor.
    At most ``max_coords`` seeded coordinates per input are perturbed.
    """
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    arrays = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    tape = T.Tape()
    watched = T.parameters_of(tape, arrays)
    tape.backward(fn(**watched))
    analytic = {k: t.grad for k, t in watched.items()}

    def value() -> float:
        return float(fn(**arrays).data)

    errors, counts = {}, {}
    for name, arr in arrays.items():
        flat = arr.reshape(-1)
        if max_coords is None or flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        numeric = np.empty(len(coords))
        for j, i in enumerate(coords):
            old = flat[i]
            flat[i] = old + eps
            up = value()
            flat[i] = old - eps
            down = value()
            flat[i] = old
            numeric[j] = (up - down) / (2 * eps)
        a = analytic[name].reshape(-1)[coords]
        errors[name] = float(rel_error(a, numeric, floor).max()) if len(coords) else 0.0
        counts[name] = len(coords)
    return GradReport(errors, counts, tolerance, time.perf_counter() - start)


def _projection_loss(rng, shape):
    """Scalar probe ``sum(out * R)`` with a fixed random ``R``."""
    r = rng.uniform(-1, 1, size=shape)
    return lambda out: T.sum_all(T.mul(out, r))


def op_suite(seed: int = 0, eps: float = 1e-5) -> GradReport:
    """Check every differentiable primitive on small random inputs in [-1, 1]."""
    rng = np.random.default_rng(seed)
    u = lambda *shape: rng.uniform(-1, 1, size=shape)
    cases = {}

    p = _projection_loss(rng, (4, 5))
    cases["matmul"] = (lambda a, b: p(T.matmul(a, b)), {"a": u(4, 3), "b": u(3, 5)})
    p_lin = _projection_loss(rng, (2, 6, 5))
    cases["linear"] = (lambda x, w, b: p_lin(T.linear(x, w, b)), {"x": u(2, 6, 4), "w": u(4, 5), "b": u(5)})
    p_sm = _projection_loss(rng, (3, 7))
    cases["softmax_rows"] = (lambda x: p_sm(T.softmax_rows(x)), {"x": u(3, 7)})
    p_up = _projection_loss(rng, (2, 7, 8))
    cases["bilinear_resize_up"] = (lambda x: p_up(T.bilinear_resize(x, 7, 8)), {"x": u(2, 3, 4)})
    p_dn = _projection_loss(rng, (2, 3, 2))
    cases["bilinear_resize_down"] = (lambda x: p_dn(T.bilinear_resize(x, 3, 2)), {"x": u(2, 8, 5)})
    p_cat = _projection_loss(rng, (5, 3, 4))
    cases["concat_channels"] = (lambda a, b: p_cat(T.concat_channels([a, b])), {"a": u(2, 3, 4), "b": u(3, 3, 4)})
    p_g = _projection_loss(rng, (3, 5))
    cases["gelu"] = (lambda x: p_g(T.gelu(x)), {"x": u(3, 5)})
    p_log = _projection_loss(rng, (3, 4))
    cases["log_clamped"] = (lambda x: p_log(T.log_clamped(x)), {"x": rng.uniform(0.1, 1.0, size=(3, 4))})
    p_d = _projection_loss(rng, (2, 6))
    cases["diagonal"] = (lambda x: p_d(T.diagonal(x)), {"x": u(2, 6, 6)})
    p_u = _projection_loss(rng, (1, 4, 2 * 3 * 3))
    cases["unfold"] = (lambda x: p_u(T.unfold(x, 3, 2, 1)[0]), {"x": u(1, 2, 4, 4)})
    p_t = _projection_loss(rng, (4, 3, 2))
    cases["swapaxes_reshape"] = (lambda x: p_t(T.reshape(T.swapaxes(x, 0, 2), (4, 3, 2))), {"x": u(2, 3, 4)})
    p_s = _projection_loss(rng, (2, 2, 3))
    cases["slice_axis"] = (lambda x: p_s(T.slice_axis(x, 1, 1, 3)), {"x": u(2, 4, 3)})
    p_m = _projection_loss(rng, (3, 4))
    cases["mul_add_broadcast"] = (lambda a, b: p_m(T.add(T.mul(a, b), b)), {"a": u(3, 4), "b": u(4)})

    start = time.perf_counter()
    errors, counts = {}, {}
    for name, (fn, inputs) in cases.items():
        rep = check_function(fn, inputs, eps=eps, floor=OP_FLOOR, seed=seed)
        for k in rep.max_rel_error:
            errors[f"op.{name}.{k}"] = rep.max_rel_error[k]
            counts[f"op.{name}.{k}"] = rep.checked[k]
    return GradReport(errors, counts, TOLERANCE, time.perf_counter() - start)


def model_gradcheck(cfg: ModelConfig | None = None, seed: int = 0, eps: float = 1e-5,
                    image_size: int = 32, coords_per_tensor: int = 200,
                    weights: LossWeights | None = None, floor: float = MODEL_FLOOR,
                    full_bce: bool = False) -> GradReport:
    """Gradient check of the full training loss w.r.t. every parameter tensor."""
    cfg = cfg or ModelConfig(seed=seed)
    weights = weights or LossWeights()
    rng = np.random.default_rng(seed)
    image = rng.uniform(0, 1, size=(3, image_size, image_size))
    labels = rng.integers(0, cfg.n_groups, size=(image_size, image_size))
    params = init_params(cfg)

    def fn(**p):
        return compute_loss(p, image, labels, cfg, weights, full_bce=full_bce).total

    return check_function(fn, params, eps=eps, floor=floor, max_coords=coords_per_tensor, seed=seed)


def gradcheck(cfg: ModelConfig | None = None, seed: int = 0, eps: float = 1e-5,
              coords_per_tensor: int = 200) -> GradReport:
    """Primitive-op suite plus the end-to-end model check, merged in one report."""
    start = time.perf_counter()
    ops = op_suite(seed, eps)
    model = model_gradcheck(cfg, seed, eps, coords_per_tensor=coords_per_tensor)
    errors = {**ops.max_rel_error, **{f"param.{k}": v for k, v in model.max_rel_error.items()}}
    counts = {**ops.checked, **{f"param.{k}": v for k, v in model.checked.items()}}
    return GradReport(errors, counts, TOLERANCE, time.perf_counter() - start)
