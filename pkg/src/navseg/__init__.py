"""Coarse-grained terrain segmentation with group-wise attention, plus the
cost-map and planning utilities that consume its output."""
from .costmap import CostGrid, GridSpec, Homography, homography_from_points, plan
from .estimator import GroupAttentionSegmenter, GroupRemapper
from .exceptions import ConfigError, DataError, ShapeError, SingularSystemError, TapeError
from .gradcheck import gradcheck
from .grouping import GroupMap, grouping_effect, load_group_map, remap
from .head import HeadConfig, head_flops
from .losses import LossWeights
from .metrics import ConfusionMatrix
from .model import ModelConfig, forward, init_params, predict_labels
from .trainer import TrainConfig, make_synth_dataset, train_toy

__version__ = "0.1.0"

__all__ = [
    "CostGrid", "GridSpec", "Homography", "homography_from_points", "plan",
    "GroupAttentionSegmenter", "GroupRemapper",
    "ConfigError", "DataError", "ShapeError", "SingularSystemError", "TapeError",
    "gradcheck", "GroupMap", "grouping_effect", "load_group_map", "remap",
    "HeadConfig", "head_flops", "LossWeights", "ConfusionMatrix",
    "ModelConfig", "forward", "init_params", "predict_labels",
    "TrainConfig", "make_synth_dataset", "train_toy",
]
