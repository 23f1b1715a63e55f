"""Input validation helpers shared by the estimator API and the CLI."""
from __future__ import annotations

import numpy as np

from .exceptions import DataError

IGNORE_LABEL = 255


def check_images(X, multiple: int = 32) -> np.ndarray:
    """Return a float64 [N, 3, H, W] batch in [0, 1].

    Accepts a single image or a batch, channels-first or channels-last
    (channels-first wins when ambiguous). uint8 input is scaled by 1/255.
    """
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise DataError(f"expected images of shape [N, 3, H, W], got {X.shape}")
    if X.shape[1] != 3 and X.shape[-1] == 3:
        X = X.transpose(0, 3, 1, 2)
    if X.shape[1] != 3:
        raise DataError(f"expected 3 colour channels, got shape {X.shape}")
    scale = 1.0 / 255.0 if X.dtype == np.uint8 else 1.0
    X = np.ascontiguousarray(X, dtype=np.float64) * scale
    if not np.isfinite(X).all():
        raise DataError("images contain NaN or infinite values")
    h, w = X.shape[-2:]
    if h % multiple or w % multiple:
        raise DataError(f"image size {h}x{w} must be a multiple of {multiple}")
    return X


def check_label_maps(y, n_classes: int, shape: tuple[int, ...] | None = None,
                     ignore: int = IGNORE_LABEL) -> np.ndarray:
    """Return integer label maps, checking range and (optionally) shape."""
    y = np.asarray(y)
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise DataError("label maps must hold integer class ids")
    y = y.astype(np.int64)
    if shape is not None and y.shape != tuple(shape):
        raise DataError(f"label maps have shape {y.shape}, expected {tuple(shape)}")
    bad = (y != ignore) & ((y < 0) | (y >= n_classes))
    if bad.any():
        pos = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DataError(f"label {int(y[pos])} at {pos} outside [0, {n_classes})")
    return y
