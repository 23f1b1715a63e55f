"""Toy-scale training: synthetic terrain data, SGD with momentum and weight
decay under a polynomial learning-rate schedule, and the optimisation loop."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterator, NamedTuple

import numpy as np

from . import tensor as T
from .backbone import check_image_size
from .exceptions import ConfigError
from .head import HeadConfig
from .losses import LossWeights, dynamic_weight_update, group_error_rate
from .metrics import ConfusionMatrix, miou
from .model import ModelConfig, compute_loss, init_params, predict_labels

log = logging.getLogger(__name__)

NOISE_SIGMA = 10.0 / 255.0

# Colour lattice with levels {0.15, 0.5, 0.85}: the 8 corners first, then the
# rest. Any two entries differ by >= 0.35 (~89/255) in at least one channel.
_LEVELS = (0.15, 0.5, 0.85)
_CORNERS = [(0.85, 0.15, 0.15), (0.15, 0.85, 0.15), (0.15, 0.15, 0.85), (0.85, 0.85, 0.15),
            (0.85, 0.15, 0.85), (0.15, 0.85, 0.85), (0.15, 0.15, 0.15), (0.85, 0.85, 0.85)]
PALETTE = np.array(_CORNERS + [(r, g, b) for r in _LEVELS for g in _LEVELS for b in _LEVELS
                               if (r, g, b) not in _CORNERS])


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class DynamicWeighting:
    enabled: bool = False
    momentum: float = 0.9
    period: int = 1
    w_init: list[float] | None = None

    def __post_init__(self):
        if not 0.0 <= self.momentum <= 1.0:
            raise ConfigError(f"dynamic weighting momentum must lie in [0, 1], got {self.momentum}")
        if self.period < 1:
            raise ConfigError("dynamic weighting period must be >= 1 epoch")


@dataclass
class TrainConfig:
    base_lr: float = 0.01
    weight_decay: float = 0.0005
    power: float = 0.9
    momentum: float = 0.9
    max_iters: int = 500
    batch_size: int = 4
    crop_size: int = 64
    image_size: int = 64
    n_train: int = 16
    n_regions: int = 3
    noise: float = NOISE_SIGMA
    flip: bool = True
    seed: int = 0
    n_groups: int = 6
    reduction: int = 8
    head_width: int = 64
    out_channels: int = 256
    temperature: float | None = None
    full_bce: bool = False
    loss: LossWeights = field(default_factory=LossWeights)
    dynamic: DynamicWeighting = field(default_factory=DynamicWeighting)

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.power <= 0:
            raise ConfigError(f"power must be positive, got {self.power}")
        if self.max_iters < 0:
            raise ConfigError(f"max_iters must be non-negative, got {self.max_iters}")
        if self.batch_size < 1 or self.n_train < 1:
            raise ConfigError("batch_size and n_train must be positive")
        for name in ("image_size", "crop_size"):
            v = getattr(self, name)
            if v <= 0 or v % 32:
                raise ConfigError(f"{name} must be a positive multiple of 32, got {v}")
        if self.crop_size > self.image_size:
            raise ConfigError("crop_size cannot exceed image_size")

    def model_config(self) -> ModelConfig:
        head = HeadConfig(n_groups=self.n_groups, reduction=self.reduction,
                          head_width=self.head_width, out_channels=self.out_channels,
                          temperature=self.temperature)
        return ModelConfig(head=head, seed=self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("loss"), dict):
            d["loss"] = LossWeights(**d["loss"])
        if isinstance(d.get("dynamic"), dict):
            d["dynamic"] = DynamicWeighting(**d["dynamic"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read train config {path}: {exc}") from None


def poly_lr(it: int, max_iters: int, base_lr: float, power: float) -> float:
    """``base_lr * (1 - it/max_iters) ** power``."""
    if not 0 <= it <= max_iters:
        raise ValueError(f"iteration {it} outside [0, {max_iters}]")
    if max_iters == 0:
        return base_lr
    return base_lr * (1.0 - it / max_iters) ** power


class SGD:
    """Momentum SGD with L2 weight decay folded into the velocity."""

    def __init__(self, momentum: float = 0.9, weight_decay: float = 0.0):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter {name} shape {p.shape}")
            v = self.velocity.get(name)
            d = g + self.weight_decay * p
            v = d if v is None else self.momentum * v + d
            self.velocity[name] = v
            p -= lr * v


def sgd_step(params, grads, lr, momentum=0.0, weight_decay=0.0, velocity=None):
    """Functional single step; returns ``(new_params, new_velocity)``."""
    velocity = {} if velocity is None else velocity
    new_p, new_v = {}, {}
    for name, p in params.items():
        d = grads[name] + weight_decay * p
        v = d if name not in velocity else momentum * velocity[name] + d
        new_v[name] = v
        new_p[name] = p - lr * v
    return new_p, new_v


# --- synthetic data ------------------------------------------------------------------------


class SynthSample(NamedTuple):
    image: np.ndarray   # [3, H, W] float in [0, 1]
    labels: np.ndarray  # [H, W] uint8 group ids


def make_synth_dataset(seed: int, n: int, h: int, w: int, n_groups: int,
                       n_regions: int = 3, noise: float = NOISE_SIGMA) -> list[SynthSample]:
    """Seeded Voronoi terrain images, one group colour per region plus noise."""
    check_image_size(h, w)
    if n_groups > len(PALETTE):
        raise ConfigError(f"at most {len(PALETTE)} groups supported by the palette")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    samples = []
    for _ in range(n):
        sites = rng.uniform(0, 1, size=(n_regions, 2)) * (h, w)
        groups = rng.integers(0, n_groups, size=n_regions)
        d2 = (yy[None] + 0.5 - sites[:, 0, None, None]) ** 2 + (xx[None] + 0.5 - sites[:, 1, None, None]) ** 2
        labels = groups[d2.argmin(axis=0)].astype(np.uint8)
        image = PALETTE[labels].transpose(2, 0, 1).copy()
        if noise > 0:
            image = np.clip(image + rng.normal(0.0, noise, size=image.shape), 0.0, 1.0)
        samples.append(SynthSample(image, labels))
    return samples


def augment(image: np.ndarray, labels: np.ndarray, crop: int, flip: bool,
            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random crop to ``crop`` x ``crop`` then random horizontal flip."""
    h, w = labels.shape
    top = int(rng.integers(0, h - crop + 1))
    left = int(rng.integers(0, w - crop + 1))
    image = image[:, top:top + crop, left:left + crop]
    labels = labels[top:top + crop, left:left + crop]
    if flip and rng.random() < 0.5:
        image, labels = image[:, :, ::-1], labels[:, ::-1]
    return np.ascontiguousarray(image), np.ascontiguousarray(labels)


# --- training loop ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: list[dict]
    class_weights: np.ndarray
    final_miou: float = float("nan")


def _batches(n: int, batch: int, rng: np.random.Generator) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (epoch, indices) forever, reshuffling every epoch."""
    epoch = 0
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            if len(idx) < batch:
                idx = np.concatenate([idx, order[:batch - len(idx)]])
            yield epoch, idx
        epoch += 1


def fit(images: np.ndarray, labels: np.ndarray, cfg: TrainConfig, params: dict | None = None,
        callback: Callable[[dict], None] | None = None) -> TrainResult:
    """Train on [N, 3, H, W] images and [N, H, W] group labels."""
    mcfg = cfg.model_config()
    params = init_params(mcfg) if params is None else {k: v.copy() for k, v in params.items()}
    rng = np.random.default_rng(cfg.seed + 1000)
    opt = SGD(cfg.momentum, cfg.weight_decay)
    g = cfg.n_groups
    class_weights = cfg.loss.weights_for(g)
    dyn = cfg.dynamic
    w_init = np.asarray(dyn.w_init, dtype=np.float64) if dyn.w_init is not None else class_weights.copy()
    if dyn.enabled:
        class_weights = w_init.copy()
    window = ConfusionMatrix(g)
    history = []
    batches = _batches(len(images), cfg.batch_size, rng)
    epoch_seen = 0

    for it in range(cfg.max_iters):
        epoch, idx = next(batches)
        if dyn.enabled and epoch != epoch_seen:
            epoch_seen = epoch
            if epoch % dyn.period == 0:
                class_weights = dynamic_weight_update(class_weights, w_init,
                                                      group_error_rate(window.counts), dyn.momentum)
                window = ConfusionMatrix(g)
        pairs = [augment(images[i], labels[i], cfg.crop_size, cfg.flip, rng) for i in idx]
        x = np.stack([p[0] for p in pairs])
        y = np.stack([p[1] for p in pairs])

        tape = T.Tape()
        tparams = T.parameters_of(tape, params)
        parts = compute_loss(tparams, x, y, mcfg, cfg.loss, full_bce=cfg.full_bce,
                             class_weights=class_weights)
        total = float(parts.total.data)
        if not math.isfinite(total):
            raise TrainingDiverged(
                f"loss became {total} at iteration {it} (ce={float(parts.ce.data)}, lr={opt})"
            )
        tape.backward(parts.total)
        lr = poly_lr(it, cfg.max_iters, cfg.base_lr, cfg.power)
        opt.step(params, {k: t.grad for k, t in tparams.items()}, lr)

        pred = parts.probs.data.argmax(axis=-3)
        batch_cm = ConfusionMatrix(g).accumulate(pred, y)
        window = window.merge(batch_cm)
        entry = {
            "iter": it,
            "lr": lr,
            "total": total,
            "ce": float(parts.ce.data),
            "ga": float(sum(float(t.data) for t in parts.ga)),
            "aux": float(parts.aux.data) if parts.aux is not None else 0.0,
            "miou": miou(batch_cm),
            "class_weights": [float(v) for v in class_weights],
        }
        history.append(entry)
        if callback is not None:
            callback(entry)
        if it % 50 == 0:
            log.debug("iter %d total %.4f miou %.3f", it, total, entry["miou"])

    return TrainResult(params, history, class_weights)


def evaluate(params: dict, images: np.ndarray, labels: np.ndarray, mcfg: ModelConfig,
             batch: int = 8) -> ConfusionMatrix:
    cm = ConfusionMatrix(mcfg.n_groups)
    for start in range(0, len(images), batch):
        pred = predict_labels(params, images[start:start + batch], mcfg)
        cm.accumulate(pred, labels[start:start + batch])
    return cm


def train_toy(cfg: TrainConfig, callback: Callable[[dict], None] | None = None) -> TrainResult:
    """Train on a seeded synthetic dataset and report final train-set mIoU."""
    data = make_synth_dataset(cfg.seed, cfg.n_train, cfg.image_size, cfg.image_size,
                              cfg.n_groups, cfg.n_regions, cfg.noise)
    images = np.stack([s.image for s in data])
    labels = np.stack([s.labels for s in data])
    result = fit(images, labels, cfg, callback=callback)
    if cfg.max_iters:
        result.final_miou = miou(evaluate(result.params, images, labels, cfg.model_config()))
    return result


def write_history(path, history: list[dict]) -> None:
    with open(path, "w") as fh:
        for entry in history:
            fh.write(json.dumps(entry) + "\n")
