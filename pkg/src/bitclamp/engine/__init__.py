"""Desk-scale training engine for binarized networks."""

from .layers import (
    AvgPool2d,
    BatchNorm,
    BinaryActivation,
    BinaryConv2d,
    BinaryLinear,
    ChannelPad,
    Conv2d,
    Flatten,
    GlobalAvgPool,
    Layer,
    Linear,
    MaxPool2d,
    Param,
    QuantizationPolicy,
    ResidualUnit,
)
from .net import ARCHITECTURES, Network, build_network
from .train import (
    TrainConfig,
    TrainResult,
    cosine_lr,
    cross_entropy,
    evaluate,
    policy_from_config,
    sgd_step,
    train,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "ARCHITECTURES", "AvgPool2d", "BatchNorm", "BinaryActivation",
    "BinaryConv2d", "BinaryLinear", "ChannelPad", "CheckpointError", "Conv2d",
    "Flatten", "GlobalAvgPool", "Layer", "Linear", "MaxPool2d", "Network",
    "Param", "QuantizationPolicy", "ResidualUnit", "TrainConfig", "TrainResult",
    "build_network", "cosine_lr", "cross_entropy", "evaluate",
    "load_checkpoint", "policy_from_config", "save_checkpoint", "sgd_step",
    "train",
]
