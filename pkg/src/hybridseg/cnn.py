"""U-shaped CNN path: encoder with max-pooling, decoder with transposed
convolutions and concatenation skips, and the additive fusion points where
projected transformer taps enter the encoder features."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
from torch import Tensor


@dataclass(frozen=True)
class CnnConfig:
    """Channel law: level l runs at spatial scale 1/2**l with base*2**l channels."""

    levels: int = 5
    base_channels: int = 16
    num_classes: int = 2

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("need at least 2 levels")
        if self.base_channels <= 0 or self.num_classes < 2:
            raise ValueError("base_channels must be positive and num_classes >= 2")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level


class ConvBlock(nn.Module):
    """Two 3x3x3 convolutions, each with instance normalization and LeakyReLU.

    Same-padding, so spatial dims are preserved.
    """

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv3d(in_ch, out_ch, kernel_size=3, padding=1),
            nn.InstanceNorm3d(out_ch),
            nn.LeakyReLU(0.01, inplace=True),
            nn.Conv3d(out_ch, out_ch, kernel_size=3, padding=1),
            nn.InstanceNorm3d(out_ch),
            nn.LeakyReLU(0.01, inplace=True),
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.body(x)


class CnnEncoder(nn.Module):
    """Produces one feature tensor per level; level l at scale 1/2**l."""

    def __init__(self, in_channels: int, config: CnnConfig):
        super().__init__()
        self.config = config
        self.blocks = nn.ModuleList()
        ch_in = in_channels
        for l in range(config.levels):
            self.blocks.append(ConvBlock(ch_in, config.channels(l)))
            ch_in = config.channels(l)
        self.pool = nn.MaxPool3d(kernel_size=2, stride=2)

    def forward(self, x: Tensor) -> list[Tensor]:
        need = 2 ** (self.config.levels - 1)
        for axis, n in enumerate(x.shape[2:]):
            if n % need != 0:
                raise ValueError(
                    f"axis {'dhw'[axis]}: extent {n} must be divisible by {need} "
                    f"(pad input to a multiple of {need})")
        pyramid = []
        for l, block in enumerate(self.blocks):
            if l > 0:
                x = self.pool(x)
            x = block(x)
            pyramid.append(x)
        return pyramid


class TapFusion(nn.Module):
    """Adds projected transformer taps to CNN encoder levels of the same scale.

    Level 0 always bypasses untouched. Channel matching uses a bias-free
    1x1x1 convolution, so a zeroed transformer path contributes exactly zero.
    """

    def __init__(self, config: CnnConfig, tap_channels: list[int], tap_levels: list[int]):
        super().__init__()
        if 0 in tap_levels:
            raise ValueError("level 0 is a pure bypass; taps cannot fuse there")
        for l in tap_levels:
            if l >= config.levels:
                raise ValueError(f"tap level {l} outside pyramid with {config.levels} levels")
        self.tap_levels = tap_levels
        self.projections = nn.ModuleList([
            nn.Conv3d(tc, config.channels(l), kernel_size=1, bias=False)
            for tc, l in zip(tap_channels, tap_levels)
        ])

    def forward(self, pyramid: list[Tensor], taps: list[Tensor] | None,
                replace: bool = False) -> list[Tensor]:
        """``taps`` channel-first, same order as tap_levels; None leaves the
        pyramid untouched. ``replace`` substitutes the projected tap for the
        CNN feature instead of adding (the transformer-only ablation)."""
        if taps is None:
            return list(pyramid)
        fused = list(pyramid)
        for proj, level, tap in zip(self.projections, self.tap_levels, taps):
            projected = proj(tap)
            if projected.shape != fused[level].shape:
                raise ValueError(
                    f"tap at level {level} projects to {tuple(projected.shape)}, "
                    f"pyramid has {tuple(fused[level].shape)}")
            fused[level] = projected if replace else fused[level] + projected
        return fused


class CnnDecoder(nn.Module):
    """3D U-Net decoder: transposed-conv upsampling, skip concatenation,
    conv blocks, and a final 1x1x1 convolution to class logits."""

    def __init__(self, config: CnnConfig):
        super().__init__()
        self.config = config
        self.ups = nn.ModuleList()
        self.blocks = nn.ModuleList()
        for l in range(config.levels - 1, 0, -1):
            self.ups.append(nn.ConvTranspose3d(
                config.channels(l), config.channels(l - 1), kernel_size=2, stride=2))
            self.blocks.append(ConvBlock(2 * config.channels(l - 1), config.channels(l - 1)))
        self.head = nn.Conv3d(config.channels(0), config.num_classes, kernel_size=1)

    def forward(self, fused: list[Tensor]) -> Tensor:
        x = fused[-1]
        for i, (up, block) in enumerate(zip(self.ups, self.blocks)):
            skip = fused[self.config.levels - 2 - i]
            x = up(x)
            if x.shape[2:] != skip.shape[2:]:
                raise ValueError(
                    f"upsampled shape {tuple(x.shape[2:])} does not match "
                    f"skip shape {tuple(skip.shape[2:])}")
            x = block(torch.cat([skip, x], dim=1))
        return self.head(x)
