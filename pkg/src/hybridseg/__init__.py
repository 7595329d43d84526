"""Hybrid CNN / shifted-window transformer 3D segmentation toolkit."""

from .cnn import CnnConfig
from .config import RunConfig
from .data import SynthSpec
from .metrics import MetricsReport
from .model import HybridSegNet, ModelConfig
from .swin import SwinEncoderConfig
from .volume import LabelVolume, Volume

__all__ = [
    "CnnConfig",
    "HybridSegNet",
    "LabelVolume",
    "MetricsReport",
    "ModelConfig",
    "RunConfig",
    "SwinEncoderConfig",
    "SynthSpec",
    "Volume",
]

__version__ = "0.1.0"
