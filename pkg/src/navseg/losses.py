"""Training objectives: cross-entropy, group-wise attention loss, auxiliary
deep supervision, their weighted sum, and dynamic class weighting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import uniform_init
from .exceptions import ConfigError, DataError
from .head import conv1x1, logits_to_probs

IGNORE_LABEL = 255


@dataclass
class LossWeights:
    lambda_ga: float = 0.5
    lambda_aux: float = 0.4
    class_weights: list[float] | None = None

    def __post_init__(self):
        if self.lambda_ga < 0 or self.lambda_aux < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.class_weights is not None and any(w < 0 for w in self.class_weights):
            raise ConfigError("class weights must be non-negative")

    def weights_for(self, n_groups: int) -> np.ndarray:
        if self.class_weights is None:
            return np.ones(n_groups)
        w = np.asarray(self.class_weights, dtype=np.float64)
        if w.shape != (n_groups,):
            raise ConfigError(f"expected {n_groups} class weights, got {w.shape[0]}")
        return w


def _check_labels(labels: np.ndarray, n_groups: int, ignore: int) -> np.ndarray:
    labels = np.asarray(labels)
    bad = (labels != ignore) & ((labels < 0) | (labels >= n_groups))
    if bad.any():
        pos = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DataError(f"label {int(labels[pos])} at {pos} outside [0, {n_groups})")
    return labels


def _onehot(labels: np.ndarray, n_groups: int, ignore: int) -> np.ndarray:
    """[..., H, W] labels -> [..., G, H, W] indicator; ignored pixels are all-zero."""
    classes = np.arange(n_groups).reshape((n_groups, 1, 1))
    return (np.expand_dims(labels, -3) == classes).astype(np.float64) * np.expand_dims(labels != ignore, -3)


def ce_loss(probs, labels, class_weights=None, ignore: int = IGNORE_LABEL) -> T.Tensor:
    """Weighted cross-entropy of probabilities [..., G, H, W], mean over scored pixels."""
    probs = T.as_tensor(probs)
    g = probs.shape[-3]
    labels = _check_labels(labels, g, ignore)
    w = np.ones(g) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    target = _onehot(labels, g, ignore) * w.reshape(g, 1, 1)
    count = int((labels != ignore).sum())
    nll = T.sum_all(T.mul(T.log_clamped(probs), target))
    if count == 0:
        return T.scale(nll, 0.0)
    return T.scale(nll, -1.0 / count)


def ga_loss(diag_map, mask, full_bce: bool = False) -> T.Tensor:
    """Group-wise attention loss for one group.

    Default: ``-sum(mask * log B) / sum(mask)`` (0 for an empty mask).
    ``full_bce`` adds ``-sum((1-mask) * log(1-B)) / sum(1-mask)``.
    """
    b = T.as_tensor(diag_map)
    mask = np.asarray(mask, dtype=np.float64)
    n_pos = mask.sum()
    pos = T.sum_all(T.mul(T.log_clamped(b), mask))
    loss = T.scale(pos, -1.0 / n_pos if n_pos else 0.0)
    if full_bce:
        neg_mask = 1.0 - mask
        n_neg = neg_mask.sum()
        neg = T.sum_all(T.mul(T.log_clamped(T.add(T.scale(b, -1.0), 1.0)), neg_mask))
        loss = T.add(loss, T.scale(neg, -1.0 / n_neg if n_neg else 0.0))
    return loss


def ga_losses(diag_maps, labels, ignore: int = IGNORE_LABEL, full_bce: bool = False,
              valid=None) -> list[T.Tensor]:
    """One GA loss per group from [..., G, H, W] diagonal maps and [..., H, W] labels.

    ``valid`` optionally restricts the mask to a subset of pixels.
    """
    diag_maps = T.as_tensor(diag_maps)
    g = diag_maps.shape[-3]
    labels = _check_labels(labels, g, ignore)
    masks = _onehot(labels, g, ignore)
    if valid is not None:
        masks = masks * np.expand_dims(valid, -3)
    out = []
    for k in range(g):
        b_k = T.slice_axis(diag_maps, -3, k, k + 1)
        out.append(ga_loss(b_k, masks[..., k:k + 1, :, :], full_bce=full_bce))
    return out


def init_aux_params(in_channels: int, hidden: int, n_groups: int, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    return {
        "aux.conv1.w": uniform_init(rng, in_channels, (in_channels, hidden)),
        "aux.conv1.b": uniform_init(rng, in_channels, (hidden,)),
        "aux.conv2.w": uniform_init(rng, hidden, (hidden, n_groups)),
        "aux.conv2.b": uniform_init(rng, hidden, (n_groups,)),
    }


def aux_probs(feature, aux_params: dict, image_hw: tuple[int, int]) -> T.Tensor:
    hidden = T.gelu(conv1x1(feature, aux_params["aux.conv1.w"], aux_params["aux.conv1.b"]))
    logits = conv1x1(hidden, aux_params["aux.conv2.w"], aux_params["aux.conv2.b"])
    return logits_to_probs(logits, *image_hw)


def aux_loss(feature, aux_params: dict, labels, class_weights=None,
             ignore: int = IGNORE_LABEL) -> T.Tensor:
    """FCN-style auxiliary cross-entropy on an intermediate feature map."""
    labels = np.asarray(labels)
    probs = aux_probs(feature, aux_params, labels.shape[-2:])
    return ce_loss(probs, labels, class_weights, ignore)


def total_loss(ce, ga, aux, weights: LossWeights) -> T.Tensor:
    """``ce + lambda_ga * sum(ga) + lambda_aux * aux``."""
    out = T.as_tensor(ce)
    if weights.lambda_ga and len(ga):
        ga_sum = ga[0]
        for term in ga[1:]:
            ga_sum = T.add(ga_sum, term)
        out = T.add(out, T.scale(ga_sum, weights.lambda_ga))
    if weights.lambda_aux and aux is not None:
        out = T.add(out, T.scale(aux, weights.lambda_aux))
    return out


def dynamic_weight_update(w_current, w_init, w_error, momentum: float) -> np.ndarray:
    """``m * W_i + (1 - m) * (W_init + W_error)``."""
    if not 0.0 <= momentum <= 1.0:
        raise ConfigError(f"momentum must lie in [0, 1], got {momentum}")
    w_current = np.asarray(w_current, dtype=np.float64)
    w_init = np.asarray(w_init, dtype=np.float64)
    w_error = np.asarray(w_error, dtype=np.float64)
    return momentum * w_current + (1.0 - momentum) * (w_init + w_error)


def group_error_rate(confusion: np.ndarray) -> np.ndarray:
    """Per-group ``1 - recall`` from a GT x pred confusion matrix (0 for absent groups)."""
    confusion = np.asarray(confusion)
    gt = confusion.sum(axis=1)
    tp = np.diag(confusion)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(gt > 0, tp / np.maximum(gt, 1), 1.0)
    return 1.0 - recall
