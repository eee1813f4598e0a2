"""Capsule-network single-image super-resolution: model, losses, metrics, training."""

from .capsules import RDCB, CapsuleState, ConvCapsuleLayer, squash
from .errors import (CheckpointError, ConfigurationError, DegenerateDirectionError,
                     NumericError, ParameterError, SRCapsError, UsageError)
from .losses import AdaptiveLoss, Loss, LossSpec
from .model import ModelConfig, SRCaps, build
from .ssim import SsimParams
from .train import TrainConfig, lr_at, train_loop

__version__ = "0.1.0"

__all__ = [
    "AdaptiveLoss", "CapsuleState", "CheckpointError", "ConfigurationError", "ConvCapsuleLayer",
    "DegenerateDirectionError", "Loss", "LossSpec", "ModelConfig", "NumericError",
    "ParameterError", "RDCB", "SRCaps", "SRCapsError", "SsimParams", "TrainConfig",
    "UsageError", "build", "lr_at", "squash", "train_loop",
]
