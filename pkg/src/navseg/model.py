"""Full segmentation network: backbone, group-wise attention head and the
training-only auxiliary decoder, wired together with one loss routine."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .backbone import STAGE_CHANNELS, backbone_forward, init_backbone_params
from .head import HeadConfig, init_head_params, mhsa_fuse, predict, spatial_align
from .io import load_tensor_dir, save_tensor_dir
from .losses import (IGNORE_LABEL, LossWeights, aux_loss, ce_loss, ga_losses,
                     init_aux_params, total_loss)

AUX_STAGE = 2
AUX_HIDDEN = 64


@dataclass(frozen=True)
class ModelConfig:
    head: HeadConfig = field(default_factory=HeadConfig)
    seed: int = 0
    aux_hidden: int = AUX_HIDDEN

    @property
    def n_groups(self) -> int:
        return self.head.n_groups

    def to_dict(self) -> dict:
        return {"head": asdict(self.head), "seed": self.seed, "aux_hidden": self.aux_hidden}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(head=HeadConfig(**d.get("head", {})), seed=d.get("seed", 0),
                   aux_hidden=d.get("aux_hidden", AUX_HIDDEN))


def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Seeded initial parameters for every sub-network, in a fixed order."""
    params = {}
    params.update(init_backbone_params(cfg.seed))
    params.update(init_head_params(cfg.head, cfg.seed + 1))
    params.update(init_aux_params(STAGE_CHANNELS[AUX_STAGE - 1], cfg.aux_hidden,
                                  cfg.n_groups, cfg.seed + 2))
    return params


class Outputs(NamedTuple):
    probs: T.Tensor
    diag_maps: T.Tensor | None
    features: list


def forward(params: dict, images, cfg: ModelConfig, train_mode: bool = True) -> Outputs:
    images = T.as_tensor(images)
    hw = images.shape[-2:]
    feats = backbone_forward(images, params)
    f_fuse = spatial_align(feats, cfg.head.reduction, hw)
    f_out, diag = mhsa_fuse(f_fuse, params, cfg.head, train_mode=train_mode, image_hw=hw)
    probs = predict(f_out, params, hw)
    return Outputs(probs, diag, feats)


class LossParts(NamedTuple):
    total: T.Tensor
    ce: T.Tensor
    ga: list
    aux: T.Tensor | None
    probs: T.Tensor


def compute_loss(params: dict, images, labels, cfg: ModelConfig, weights: LossWeights,
                 full_bce: bool = False, class_weights=None) -> LossParts:
    """Forward in training mode and combine all objectives."""
    out = forward(params, images, cfg, train_mode=True)
    cw = weights.weights_for(cfg.n_groups) if class_weights is None else class_weights
    ce = ce_loss(out.probs, labels, cw)
    ga = ga_losses(out.diag_maps, labels, full_bce=full_bce)
    aux = aux_loss(out.features[AUX_STAGE - 1], params, labels, cw)
    return LossParts(total_loss(ce, ga, aux, weights), ce, ga, aux, out.probs)


def predict_labels(params: dict, images, cfg: ModelConfig) -> np.ndarray:
    """Argmax group map with the attention-diagonal branch skipped."""
    probs = forward(params, images, cfg, train_mode=False).probs.data
    return probs.argmax(axis=-3)


def save_checkpoint(directory, params: dict, cfg: ModelConfig, extra: dict | None = None) -> None:
    meta = {"model": cfg.to_dict()}
    if extra:
        meta.update(extra)
    save_tensor_dir(directory, params, meta)


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], ModelConfig]:
    tensors, manifest = load_tensor_dir(directory)
    return tensors, ModelConfig.from_dict(manifest.get("model", {}))


__all__ = ["ModelConfig", "init_params", "forward", "compute_loss", "predict_labels",
           "save_checkpoint", "load_checkpoint", "IGNORE_LABEL"]
