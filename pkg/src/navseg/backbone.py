"""Multi-scale patch-embedding backbone.

Four strided patch embeddings (7x7/4 then 2x2/2 three times), each followed
by GELU, produce features at 1/4, 1/8, 1/16 and 1/32 of the input size with
32, 64, 160 and 256 channels.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .exceptions import ConfigError, ShapeError

STAGE_CHANNELS = (32, 64, 160, 256)
# (window, stride, pad) per stage
STAGE_PATCHING = ((7, 4, 3), (2, 2, 0), (2, 2, 0), (2, 2, 0))


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_backbone_params(seed: int = 0, in_channels: int = 3,
                         channels=STAGE_CHANNELS) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {}
    c_prev = in_channels
    for i, (c_out, (window, _, _)) in enumerate(zip(channels, STAGE_PATCHING), start=1):
        fan_in = c_prev * window * window
        params[f"backbone.stage{i}.w"] = uniform_init(rng, fan_in, (fan_in, c_out))
        params[f"backbone.stage{i}.b"] = uniform_init(rng, fan_in, (c_out,))
        c_prev = c_out
    return params


def patch_embed(x, window: int, stride: int, w, b=None, pad: int | None = None) -> T.Tensor:
    """Project every (zero padded) ``window`` x ``window`` patch with ``w``.

    ``x`` is [..., C_in, H, W] and ``w`` is [C_in*window*window, C_out];
    the result is [..., C_out, H', W'] with
    ``H' = (H + 2*pad - window) // stride + 1``. ``pad`` defaults to
    ``(window - 1) // 2``.
    """
    if pad is None:
        pad = (window - 1) // 2
    x = T.as_tensor(x)
    cols, h_out, w_out = T.unfold(x, window, stride, pad)
    y = T.linear(cols, w, b)
    c_out = y.shape[-1]
    y = T.swapaxes(y, -1, -2)
    return T.reshape(y, x.shape[:-3] + (c_out, h_out, w_out))


def check_image_size(h: int, w: int) -> None:
    if h % 32 or w % 32 or h <= 0 or w <= 0:
        raise ConfigError(f"image size {h}x{w} must be a positive multiple of 32")


def backbone_forward(image, params: dict) -> list[T.Tensor]:
    """Return [F_1, F_2, F_3, F_4] for a [..., 3, H, W] image.

    ``params`` maps names from :func:`init_backbone_params` to tensors or
    arrays.
    """
    image = T.as_tensor(image)
    if image.ndim < 3:
        raise ShapeError(f"expected [..., C, H, W] image, got {image.shape}")
    check_image_size(*image.shape[-2:])
    feats = []
    x = image
    for i, (window, stride, pad) in enumerate(STAGE_PATCHING, start=1):
        x = T.gelu(patch_embed(x, window, stride, params[f"backbone.stage{i}.w"],
                               params[f"backbone.stage{i}.b"], pad=pad))
        feats.append(x)
    return feats
