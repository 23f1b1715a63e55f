"""Group-wise attention segmentation head.

Multi-scale features are resized to one bottleneck resolution
(``H/r x W/r``), concatenated, flattened into tokens and fused by a
multi-head self-attention block with one head per navigability group.
The diagonal of each head's score matrix is an image-sized map used only
by the training loss; the fused features are classified into per-pixel
group probabilities.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .backbone import STAGE_CHANNELS, uniform_init
from .exceptions import ConfigError, ShapeError

REDUCTIONS = (8, 16, 32)


@dataclass(frozen=True)
class HeadConfig:
    n_groups: int = 6
    reduction: int = 8
    head_width: int = 64
    out_channels: int = 256
    in_channels: int = sum(STAGE_CHANNELS)
    temperature: float | None = None

    def __post_init__(self):
        if self.n_groups < 1:
            raise ConfigError(f"n_groups must be >= 1, got {self.n_groups}")
        if self.reduction not in REDUCTIONS:
            raise ConfigError(f"reduction must be one of {REDUCTIONS}, got {self.reduction}")
        if self.head_width < 1 or self.out_channels < 1:
            raise ConfigError("head_width and out_channels must be positive")
        if self.temperature is not None and self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")

    @property
    def attn_channels(self) -> int:
        return self.n_groups * self.head_width

    @property
    def tau(self) -> float:
        return math.sqrt(self.head_width) if self.temperature is None else float(self.temperature)

    def bottleneck(self, h: int, w: int) -> tuple[int, int]:
        if h % self.reduction or w % self.reduction:
            raise ConfigError(f"image size {h}x{w} is not divisible by r={self.reduction}")
        return h // self.reduction, w // self.reduction

    def to_dict(self) -> dict:
        return asdict(self)


def init_head_params(cfg: HeadConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    c_in, c_att, c_out, g = cfg.in_channels, cfg.attn_channels, cfg.out_channels, cfg.n_groups
    shapes = {
        "head.in_proj": (c_in, c_att),
        "head.qkv": (c_att, 3 * c_att),
        "head.out_proj": (c_att, c_out),
        "head.cls1": (c_out, c_out),
        "head.cls2": (c_out, g),
    }
    params = {}
    for name, (fan_in, fan_out) in shapes.items():
        params[f"{name}.w"] = uniform_init(rng, fan_in, (fan_in, fan_out))
        params[f"{name}.b"] = uniform_init(rng, fan_in, (fan_out,))
    return params


def conv1x1(x, w, b=None) -> T.Tensor:
    """Pointwise convolution of a [..., C, H, W] tensor with w [C, C']."""
    x = T.as_tensor(x)
    *lead, c, h, wd = x.shape
    lead = tuple(lead)
    tokens = T.swapaxes(T.reshape(x, lead + (c, h * wd)), -1, -2)
    y = T.linear(tokens, w, b)
    return T.reshape(T.swapaxes(y, -1, -2), lead + (y.shape[-1], h, wd))


def spatial_align(features, reduction: int, image_hw: tuple[int, int] | None = None) -> T.Tensor:
    """Resize every F_i to (H/r, W/r) and concatenate along channels.

    ``image_hw`` defaults to four times the spatial size of F_1.
    """
    features = [T.as_tensor(f) for f in features]
    if image_hw is None:
        image_hw = (features[0].shape[-2] * 4, features[0].shape[-1] * 4)
    h, w = image_hw
    if h % reduction or w % reduction:
        raise ConfigError(f"image size {h}x{w} is not divisible by r={reduction}")
    hf, wf = h // reduction, w // reduction
    return T.concat_channels([T.bilinear_resize(f, hf, wf) for f in features])


def attention(f_fuse, params: dict, cfg: HeadConfig):
    """Run the fusion block; return (F_out [..., C_out, Hf, Wf], scores [..., G, L, L])."""
    f_fuse = T.as_tensor(f_fuse)
    *lead, c, hf, wf = f_fuse.shape
    lead = tuple(lead)
    if c != cfg.in_channels:
        raise ShapeError(f"F_fuse has {c} channels, head expects {cfg.in_channels}")
    L = hf * wf
    g, dh, c_att = cfg.n_groups, cfg.head_width, cfg.attn_channels

    flat = T.swapaxes(T.reshape(f_fuse, lead + (c, L)), -1, -2)
    a_in = T.linear(flat, params["head.in_proj.w"], params["head.in_proj.b"])
    qkv = T.linear(a_in, params["head.qkv.w"], params["head.qkv.b"])
    qkv = T.swapaxes(T.reshape(qkv, lead + (L, 3 * g, dh)), -2, -3)
    q = T.slice_axis(qkv, -3, 0, g)
    k = T.slice_axis(qkv, -3, g, 2 * g)
    v = T.slice_axis(qkv, -3, 2 * g, 3 * g)

    logits = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / cfg.tau)
    scores = T.softmax_rows(logits)
    heads = T.matmul(scores, v)
    heads = T.reshape(T.swapaxes(heads, -2, -3), lead + (L, c_att))
    fused = T.linear(T.add(heads, a_in), params["head.out_proj.w"], params["head.out_proj.b"])
    f_out = T.reshape(T.swapaxes(fused, -1, -2), lead + (cfg.out_channels, hf, wf))
    return f_out, scores


def diag_to_map(scores, h: int, w: int, reduction: int) -> T.Tensor:
    """Self-attention diagonal of [..., L, L] scores as an [..., H, W] map."""
    scores = T.as_tensor(scores)
    if h % reduction or w % reduction:
        raise ConfigError(f"image size {h}x{w} is not divisible by r={reduction}")
    hf, wf = h // reduction, w // reduction
    L = scores.shape[-1]
    if L != hf * wf:
        raise ShapeError(f"score matrix has L={L}, expected {hf}*{wf}={hf * wf}")
    d = T.diagonal(scores)
    d = T.reshape(d, scores.shape[:-2] + (hf, wf))
    return T.bilinear_resize(d, h, w)


def mhsa_fuse(f_fuse, params: dict, cfg: HeadConfig, train_mode: bool = True,
              image_hw: tuple[int, int] | None = None):
    """Return ``(F_out, diag_maps)``.

    ``diag_maps`` is [..., G, H, W] in training mode and ``None`` otherwise;
    at inference the diagonal branch is never computed.
    """
    f_out, scores = attention(f_fuse, params, cfg)
    if not train_mode:
        return f_out, None
    if image_hw is None:
        image_hw = (f_out.shape[-2] * cfg.reduction, f_out.shape[-1] * cfg.reduction)
    return f_out, diag_to_map(scores, *image_hw, cfg.reduction)


def classify_logits(f_out, params: dict) -> T.Tensor:
    hidden = T.gelu(conv1x1(f_out, params["head.cls1.w"], params["head.cls1.b"]))
    return conv1x1(hidden, params["head.cls2.w"], params["head.cls2.b"])


def logits_to_probs(logits, h: int, w: int) -> T.Tensor:
    return T.softmax(T.bilinear_resize(logits, h, w), axis=-3)


def predict(f_out, params: dict, image_hw: tuple[int, int]) -> T.Tensor:
    """Per-pixel group probabilities P, shape [..., G, H, W]."""
    return logits_to_probs(classify_logits(f_out, params), *image_hw)


def head_flops(cfg: HeadConfig, h: int, w: int) -> dict[str, int]:
    """Multiply-add counts of the inference path, by component.

    Resizing and softmax are not counted; the training-only diagonal branch
    is excluded.
    """
    hf, wf = cfg.bottleneck(h, w)
    L = hf * wf
    c_att, c_out, g = cfg.attn_channels, cfg.out_channels, cfg.n_groups
    terms = {
        "in_proj": L * cfg.in_channels * c_att,
        "qkv": L * c_att * 3 * c_att,
        "attention": 2 * g * L * L * cfg.head_width,
        "out_proj": L * c_att * c_out,
        "classifier": L * c_out * c_out + L * c_out * g,
    }
    terms["total"] = sum(terms.values())
    return terms
