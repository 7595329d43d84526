"""Full hybrid network: both encoder paths, additive fusion, U-Net decoder,
the combined Dice + cross-entropy loss, and single-encoder ablation modes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .cnn import CnnConfig, CnnDecoder, CnnEncoder, TapFusion
from .swin import SwinEncoder, SwinEncoderConfig
from .volume import LabelVolume, Volume

MODES = ("hybrid", "cnn_only", "swin_only")

DICE_SMOOTH = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    swin: SwinEncoderConfig = field(default_factory=SwinEncoderConfig)
    cnn: CnnConfig = field(default_factory=CnnConfig)
    in_channels: int = 1
    mode: str = "hybrid"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        p = self.swin.patch_size
        if p[0] != p[1] or p[0] != p[2]:
            raise ValueError("fusion requires an isotropic patch size")
        if p[0] & (p[0] - 1):
            raise ValueError("patch size must be a power of two to align with CNN scales")
        deepest = int(np.log2(p[0])) + self.swin.num_stages - 1
        if deepest >= self.cnn.levels:
            raise ValueError(
                f"deepest tap sits at scale 1/{2 ** deepest}; CNN with "
                f"{self.cnn.levels} levels only reaches 1/{2 ** (self.cnn.levels - 1)}")

    @property
    def num_classes(self) -> int:
        return self.cnn.num_classes

    def tap_levels(self) -> list[int]:
        """Pyramid level fused with each transformer stage tap."""
        offset = int(np.log2(self.swin.patch_size[0]))
        return [offset + s for s in range(self.swin.num_stages)]


class HybridSegNet(nn.Module):
    """Two parallel encoders fused by addition at matching scales.

    Modes: ``hybrid`` adds projected transformer taps to CNN features;
    ``cnn_only`` skips the transformer path entirely; ``swin_only``
    replaces CNN features at tap scales with projected taps (level 0 keeps
    the CNN stem, since the transformer path has no full-resolution tap).
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = CnnEncoder(config.in_channels, config.cnn)
        self.swin = SwinEncoder(config.in_channels, config.swin)
        tap_channels = [config.swin.stage_channels(s) for s in range(config.swin.num_stages)]
        self.fusion = TapFusion(config.cnn, tap_channels, config.tap_levels())
        self.decoder = CnnDecoder(config.cnn)

    def forward(self, volume: Tensor) -> Tensor:
        """(B, C_in, D, H, W) -> (B, K, D, H, W) logits."""
        pyramid = self.encoder(volume)
        if self.config.mode == "cnn_only":
            taps = None
        else:
            taps = [t.permute(0, 4, 1, 2, 3) for t in self.swin(volume)]
        fused = self.fusion(pyramid, taps, replace=self.config.mode == "swin_only")
        return self.decoder(fused)


def soft_dice_loss(logits: Tensor, labels: Tensor) -> Tensor:
    """1 - mean per-class soft Dice over the batch, smoothed against 0/0."""
    k = logits.shape[1]
    probs = logits.softmax(dim=1)
    onehot = F.one_hot(labels, k).movedim(-1, 1).to(probs.dtype)
    dims = (0, 2, 3, 4)
    inter = (probs * onehot).sum(dim=dims)
    denom = probs.sum(dim=dims) + onehot.sum(dim=dims)
    dice = (2 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)
    return 1 - dice.mean()


def segmentation_loss(logits: Tensor, labels: Tensor) -> Tensor:
    """Equal-weight mean of soft-Dice loss and voxel-wise cross-entropy."""
    k = logits.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(
            f"labels must lie in [0, {k - 1}], got range "
            f"[{int(labels.min())}, {int(labels.max())}]")
    ce = F.cross_entropy(logits, labels)
    return 0.5 * (soft_dice_loss(logits, labels) + ce)


def argmax_labels(logits: np.ndarray) -> np.ndarray:
    """Per-voxel argmax over the leading class axis; ties go to the lowest class."""
    return np.argmax(logits, axis=0).astype(np.int64)


@torch.no_grad()
def predict_volume(model: HybridSegNet, volume: Volume) -> LabelVolume:
    model.eval()
    x = torch.from_numpy(volume.values).permute(3, 0, 1, 2)[None].float()
    logits = model(x)[0].numpy()
    return LabelVolume(argmax_labels(logits), spacing=volume.spacing)
