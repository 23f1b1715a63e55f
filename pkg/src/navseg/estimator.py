"""scikit-learn style wrappers around the segmentation network and grouping."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import metrics
from .grouping import GroupMap, load_group_map, remap
from .losses import LossWeights
from .model import ModelConfig, forward, load_checkpoint, predict_labels, save_checkpoint
from .trainer import DynamicWeighting, TrainConfig, evaluate, fit
from .validation import check_images, check_label_maps


class GroupAttentionSegmenter(BaseEstimator):
    """Coarse-grained terrain segmenter with group-wise attention fusion.

    ``fit`` takes images [N, 3, H, W] (or channels-last / uint8) and group
    label maps [N, H, W] with values in ``[0, n_groups)`` or 255 (ignored).
    ``predict`` returns argmax group maps; ``score`` returns mIoU.
    """

    def __init__(self, n_groups=6, reduction=8, head_width=64, out_channels=256,
                 temperature=None, lambda_ga=0.5, lambda_aux=0.4, class_weights=None,
                 full_bce=False, max_iter=500, batch_size=4, crop_size=None, base_lr=0.01,
                 momentum=0.9, weight_decay=0.0005, power=0.9, flip=True,
                 dynamic_weighting=False, dw_momentum=0.9, dw_period=1, random_state=0):
        self.n_groups = n_groups
        self.reduction = reduction
        self.head_width = head_width
        self.out_channels = out_channels
        self.temperature = temperature
        self.lambda_ga = lambda_ga
        self.lambda_aux = lambda_aux
        self.class_weights = class_weights
        self.full_bce = full_bce
        self.max_iter = max_iter
        self.batch_size = batch_size
        self.crop_size = crop_size
        self.base_lr = base_lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.power = power
        self.flip = flip
        self.dynamic_weighting = dynamic_weighting
        self.dw_momentum = dw_momentum
        self.dw_period = dw_period
        self.random_state = random_state

    def _train_config(self, n: int, size: int) -> TrainConfig:
        return TrainConfig(
            base_lr=self.base_lr, weight_decay=self.weight_decay, power=self.power,
            momentum=self.momentum, max_iters=self.max_iter, batch_size=self.batch_size,
            crop_size=self.crop_size or size, image_size=size, n_train=n,
            flip=self.flip, seed=self.random_state, n_groups=self.n_groups,
            reduction=self.reduction, head_width=self.head_width,
            out_channels=self.out_channels, temperature=self.temperature,
            full_bce=self.full_bce,
            loss=LossWeights(self.lambda_ga, self.lambda_aux,
                             None if self.class_weights is None else list(self.class_weights)),
            dynamic=DynamicWeighting(self.dynamic_weighting, self.dw_momentum, self.dw_period),
        )

    def fit(self, X, y):
        X = check_images(X)
        y = check_label_maps(y, self.n_groups, shape=(X.shape[0],) + X.shape[-2:])
        if X.shape[-1] != X.shape[-2] and self.crop_size is None:
            raise ValueError("non-square images need an explicit crop_size")
        cfg = self._train_config(len(X), X.shape[-1])
        result = fit(X, y, cfg)
        self.params_ = result.params
        self.history_ = result.history
        self.class_weights_ = result.class_weights
        self.model_config_ = cfg.model_config()
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_images(X)
        return forward(self.params_, X, self.model_config_, train_mode=False).probs.data

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        return predict_labels(self.params_, check_images(X), self.model_config_).astype(np.uint8)

    def attention_maps(self, X) -> np.ndarray:
        """Per-group self-attention diagonal maps [N, G, H, W]."""
        check_is_fitted(self, "params_")
        X = check_images(X)
        return forward(self.params_, X, self.model_config_, train_mode=True).diag_maps.data

    def score(self, X, y) -> float:
        """Mean IoU over the given images."""
        check_is_fitted(self, "params_")
        X = check_images(X)
        y = check_label_maps(y, self.n_groups, shape=(X.shape[0],) + X.shape[-2:])
        return metrics.miou(evaluate(self.params_, X, y, self.model_config_))

    def save(self, directory) -> None:
        check_is_fitted(self, "params_")
        save_checkpoint(directory, self.params_, self.model_config_,
                        {"estimator": self.get_params()})

    @classmethod
    def load(cls, directory) -> "GroupAttentionSegmenter":
        params, mcfg = load_checkpoint(directory)
        head = mcfg.head
        est = cls(n_groups=head.n_groups, reduction=head.reduction, head_width=head.head_width,
                  out_channels=head.out_channels, temperature=head.temperature,
                  random_state=mcfg.seed)
        est.params_ = params
        est.model_config_ = mcfg
        return est


class GroupRemapper(TransformerMixin, BaseEstimator):
    """Map fine-class label maps onto navigability groups.

    ``groups`` is a config path, a config dict, a :class:`GroupMap`, or
    ``None`` for the shipped default grouping.
    """

    def __init__(self, groups=None):
        self.groups = groups

    def fit(self, X=None, y=None):
        if isinstance(self.groups, GroupMap):
            self.group_map_ = self.groups
        elif isinstance(self.groups, dict):
            self.group_map_ = GroupMap.from_dict(self.groups)
        else:
            self.group_map_ = load_group_map(self.groups)
        self.n_groups_ = self.group_map_.n_groups
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "group_map_")
        return remap(X, self.group_map_)
