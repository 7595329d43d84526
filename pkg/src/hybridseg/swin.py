"""Shifted-window transformer encoder path.

Four hierarchical stages, each a pair of transformer layers (regular
window attention, then shifted window attention), with a patch-merging
channel reduction between stages and a normalized feature tap after each
stage for fusion with the CNN path.

Blocks use pre-normalization residual order: x + Attn(Norm(x)), then
x + MLP(Norm(x)).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor
from torch.nn.init import trunc_normal_

from .geometry import (
    WindowSpec,
    crop_grid,
    pad_grid,
    partition_patches,
    partition_windows,
    reverse_windows,
    roll_grid,
    shift_attention_mask,
)


@dataclass(frozen=True)
class SwinEncoderConfig:
    """Architectural hyperparameters of the transformer path.

    Stage s operates at channel width embed_dim * 2**s with heads[s] heads;
    the structure is fixed at four stages of two transformer layers each.
    """

    patch_size: tuple[int, int, int] = (2, 2, 2)
    embed_dim: int = 24
    heads: tuple[int, ...] = (3, 6, 12, 24)
    window: tuple[int, int, int] = (4, 4, 4)
    mlp_ratio: float = 4.0
    use_relative_bias: bool = True
    num_stages: int = 4

    def __post_init__(self):
        if min(self.patch_size) <= 0 or min(self.window) <= 0:
            raise ValueError("patch and window extents must be positive")
        if self.embed_dim <= 0 or self.mlp_ratio <= 0:
            raise ValueError("embed_dim and mlp_ratio must be positive")
        if len(self.heads) != self.num_stages:
            raise ValueError(
                f"need one head count per stage: {len(self.heads)} given, "
                f"{self.num_stages} stages")
        for s, h in enumerate(self.heads):
            if (self.embed_dim * 2 ** s) % h != 0:
                raise ValueError(
                    f"stage {s} width {self.embed_dim * 2 ** s} not divisible by heads {h}")

    def stage_channels(self, stage: int) -> int:
        return self.embed_dim * 2 ** stage


def _init_linear(m: nn.Linear):
    trunc_normal_(m.weight, std=0.02)
    if m.bias is not None:
        nn.init.zeros_(m.bias)


def relative_position_index(window: tuple[int, int, int]) -> Tensor:
    """Flat index into the relative-bias table for every token pair, (T, T)."""
    coords = torch.stack(torch.meshgrid(
        *(torch.arange(w) for w in window), indexing="ij"))  # (3, wd, wh, ww)
    coords = coords.flatten(1)  # (3, T)
    rel = coords[:, :, None] - coords[:, None, :]  # (3, T, T)
    for axis in range(3):
        rel[axis] += window[axis] - 1
    strides = ((2 * window[1] - 1) * (2 * window[2] - 1), 2 * window[2] - 1, 1)
    return rel[0] * strides[0] + rel[1] * strides[1] + rel[2]


class WindowAttention(nn.Module):
    """Multi-head self-attention over a batch of token windows.

    Adds a learned relative-position bias per head (switchable) and an
    additive mask with one row of window-masks broadcast over the batch.
    """

    def __init__(self, dim: int, heads: int, window: tuple[int, int, int],
                 use_relative_bias: bool = True):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.window = window
        self.head_dim = dim // heads
        self.scale = self.head_dim ** -0.5
        self.use_relative_bias = use_relative_bias

        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        _init_linear(self.qkv)
        _init_linear(self.proj)

        table_size = prod(2 * w - 1 for w in window)
        self.relative_bias_table = nn.Parameter(torch.zeros(table_size, heads))
        self.register_buffer("relative_index", relative_position_index(window),
                             persistent=False)

    def attention_weights(self, windows: Tensor, mask: Tensor | None) -> tuple[Tensor, Tensor]:
        """Softmax attention matrices and value rows.

        Returns (attn, v) with attn shaped (B_, heads, T, T) and
        v shaped (B_, heads, T, head_dim).
        """
        b_, t, c = windows.shape
        qkv = self.qkv(windows).view(b_, t, 3, self.heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)
        attn = (q * self.scale) @ k.transpose(-2, -1)
        if self.use_relative_bias:
            bias = self.relative_bias_table[self.relative_index.view(-1)]
            bias = bias.view(t, t, self.heads).permute(2, 0, 1)
            attn = attn + bias.to(attn.dtype)
        if mask is not None:
            nw = mask.shape[0]
            attn = attn.view(b_ // nw, nw, self.heads, t, t)
            attn = attn + mask.to(attn.dtype)[None, :, None]
            attn = attn.view(b_, self.heads, t, t)
        return attn.softmax(dim=-1), v

    def forward(self, windows: Tensor, mask: Tensor | None = None) -> Tensor:
        b_, t, c = windows.shape
        attn, v = self.attention_weights(windows, mask)
        out = (attn @ v).transpose(1, 2).reshape(b_, t, c)
        return self.proj(out)


class SwinBlock(nn.Module):
    """One transformer layer: windowed attention plus MLP, pre-norm residuals.

    ``shifted`` selects the half-window cyclic shift with its region mask.
    Inputs not divisible by the window are zero-padded high-side and the
    padded tokens are masked out of attention.
    """

    def __init__(self, dim: int, heads: int, window: tuple[int, int, int],
                 shifted: bool, mlp_ratio: float = 4.0, use_relative_bias: bool = True):
        super().__init__()
        self.window = window
        self.shifted = shifted
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, window, use_relative_bias)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))
        _init_linear(self.mlp[0])
        _init_linear(self.mlp[2])
        self._mask_cache: dict[tuple[int, int, int], Tensor | None] = {}

    def _spec(self) -> WindowSpec:
        if self.shifted:
            return WindowSpec.half_shift(self.window)
        return WindowSpec(self.window)

    def _mask_for(self, dims: tuple[int, int, int],
                  padded: tuple[int, int, int]) -> Tensor | None:
        key = dims
        if key not in self._mask_cache:
            spec = self._spec()
            if spec.shift == (0, 0, 0) and dims == padded:
                mask = None
            else:
                valid = None
                if dims != padded:
                    valid = torch.zeros(padded, dtype=torch.bool)
                    valid[:dims[0], :dims[1], :dims[2]] = True
                mask = shift_attention_mask(padded, spec, valid)
            self._mask_cache[key] = mask
        return self._mask_cache[key]

    def forward(self, x: Tensor) -> Tensor:
        _, d, h, w, _ = x.shape
        spec = self._spec()
        shortcut = x
        y = self.norm1(x)
        y, pad = pad_grid(y, self.window)
        padded = tuple(y.shape[1:4])
        mask = self._mask_for((d, h, w), padded)
        y = roll_grid(y, tuple(-s for s in spec.shift))
        wins = partition_windows(y, self.window)
        wins = self.attn(wins, mask)
        y = reverse_windows(wins, self.window, padded)
        y = roll_grid(y, spec.shift)
        y = crop_grid(y, pad)
        x = shortcut + y
        return x + self.mlp(self.norm2(x))


class PatchMergeReduce(nn.Module):
    """2x2x2 neighborhood concatenation followed by a linear 8C -> 2C reduction."""

    def __init__(self, dim: int):
        super().__init__()
        self.reduction = nn.Linear(8 * dim, 2 * dim, bias=False)
        _init_linear(self.reduction)

    def forward(self, x: Tensor) -> Tensor:
        x, _ = pad_grid(x, (2, 2, 2))
        x = partition_patches(x, (2, 2, 2))
        return self.reduction(x)


class SwinEncoder(nn.Module):
    """Four-stage hierarchical encoder producing one normalized tap per stage.

    Tap s has spatial dims input/(patch * 2**s) per axis and channels
    embed_dim * 2**s. Taps come out channel-last, (B, D, H, W, C).
    """

    def __init__(self, in_channels: int, config: SwinEncoderConfig):
        super().__init__()
        self.config = config
        self.in_channels = in_channels
        self.embed = nn.Linear(in_channels * prod(config.patch_size), config.embed_dim)
        _init_linear(self.embed)

        self.stages = nn.ModuleList()
        self.tap_norms = nn.ModuleList()
        self.merges = nn.ModuleList()
        for s in range(config.num_stages):
            dim = config.stage_channels(s)
            self.stages.append(nn.ModuleList([
                SwinBlock(dim, config.heads[s], config.window, shifted=False,
                          mlp_ratio=config.mlp_ratio,
                          use_relative_bias=config.use_relative_bias),
                SwinBlock(dim, config.heads[s], config.window, shifted=True,
                          mlp_ratio=config.mlp_ratio,
                          use_relative_bias=config.use_relative_bias),
            ]))
            self.tap_norms.append(nn.LayerNorm(dim))
            if s < config.num_stages - 1:
                self.merges.append(PatchMergeReduce(dim))

    def forward(self, volume: Tensor) -> list[Tensor]:
        """volume: (B, C_in, D, H, W) -> list of 4 channel-last taps."""
        if volume.shape[1] != self.in_channels:
            raise ValueError(
                f"expected {self.in_channels} input channels, got {volume.shape[1]}")
        for axis, (n, p) in enumerate(zip(volume.shape[2:], self.config.patch_size)):
            if n % p != 0:
                raise ValueError(
                    f"axis {'dhw'[axis]}: extent {n} not divisible by patch size {p}")
        x = volume.permute(0, 2, 3, 4, 1)
        x = partition_patches(x, self.config.patch_size)
        x = self.embed(x)
        taps = []
        for s, stage in enumerate(self.stages):
            for block in stage:
                x = block(x)
            taps.append(self.tap_norms[s](x))
            if s < self.config.num_stages - 1:
                x = self.merges[s](x)
        return taps
