"""Index algebra for the shifted-window scheme.

Everything here is a deterministic pure function: patch partition, window
partition/reverse, cyclic shift, shift-attention masks, padding, and
2x2x2 neighborhood merging. No learned content lives in this module.

Raster order is d-major, then h, then w, everywhere. Additive attention
masks use the finite constant ``MASK_VALUE`` (-10000) instead of -inf so
that downstream softmax arithmetic never produces NaN.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod

import torch
from torch import Tensor

from .volume import Volume

MASK_VALUE = -10000.0


@dataclass(frozen=True)
class GridDims:
    d: int
    h: int
    w: int

    def __post_init__(self):
        if min(self.d, self.h, self.w) <= 0:
            raise ValueError(f"grid dims must be positive, got {self}")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.d, self.h, self.w)


@dataclass(frozen=True)
class WindowSpec:
    """Per-axis window extents plus the cyclic shift applied before windowing."""

    window: tuple[int, int, int]
    shift: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        if min(self.window) <= 0:
            raise ValueError(f"window extents must be positive, got {self.window}")
        for s, w in zip(self.shift, self.window):
            if not 0 <= s < w:
                raise ValueError(f"shift {self.shift} out of range for window {self.window}")

    @classmethod
    def half_shift(cls, window: tuple[int, int, int]) -> "WindowSpec":
        return cls(window=window, shift=tuple(w // 2 for w in window))

    @property
    def tokens_per_window(self) -> int:
        return prod(self.window)


@dataclass
class TokenGrid:
    """3D lattice of embedding vectors, values shaped (D, H, W, C)."""

    values: Tensor

    def __post_init__(self):
        if self.values.ndim != 4:
            raise ValueError(f"token grid must be (D,H,W,C), got shape {tuple(self.values.shape)}")

    @property
    def dims(self) -> GridDims:
        d, h, w, _ = self.values.shape
        return GridDims(d, h, w)

    @property
    def channels(self) -> int:
        return self.values.shape[3]


@dataclass
class WindowBatch:
    """Windows cut from a TokenGrid: values (num_windows, tokens_per_window, C)."""

    values: Tensor
    grid_dims: GridDims
    spec: WindowSpec

    @property
    def num_windows(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class PadRecord:
    """High-side padding added per axis; allows exact crop-back."""

    pad: tuple[int, int, int]

    @property
    def empty(self) -> bool:
        return self.pad == (0, 0, 0)


def _check_divisible(dims: tuple[int, int, int], extents: tuple[int, int, int], what: str):
    for axis, (n, e) in enumerate(zip(dims, extents)):
        if n % e != 0:
            raise ValueError(f"axis {'dhw'[axis]}: extent {n} not divisible by {what} {e}")


def partition_patches(x: Tensor, patch: tuple[int, int, int]) -> Tensor:
    """(B, D, H, W, C) -> (B, D/pd, H/ph, W/pw, C*pd*ph*pw).

    Each output token is the raster-order concatenation of its patch's
    voxels; each voxel contributes its full channel vector.
    """
    b, d, h, w, c = x.shape
    pd, ph, pw = patch
    _check_divisible((d, h, w), patch, "patch size")
    x = x.view(b, d // pd, pd, h // ph, ph, w // pw, pw, c)
    x = x.permute(0, 1, 3, 5, 2, 4, 6, 7).contiguous()
    return x.view(b, d // pd, h // ph, w // pw, pd * ph * pw * c)


def partition_windows(x: Tensor, window: tuple[int, int, int]) -> Tensor:
    """(B, D, H, W, C) -> (B * num_windows, tokens_per_window, C).

    Windows are enumerated in raster order over window coordinates and
    tokens within a window are in raster order.
    """
    b, d, h, w, c = x.shape
    wd, wh, ww = window
    _check_divisible((d, h, w), window, "window extent")
    x = x.view(b, d // wd, wd, h // wh, wh, w // ww, ww, c)
    x = x.permute(0, 1, 3, 5, 2, 4, 6, 7).contiguous()
    return x.view(-1, wd * wh * ww, c)


def reverse_windows(windows: Tensor, window: tuple[int, int, int],
                    dims: tuple[int, int, int]) -> Tensor:
    """Exact inverse of :func:`partition_windows`; returns (B, D, H, W, C)."""
    d, h, w = dims
    wd, wh, ww = window
    num_windows = (d // wd) * (h // wh) * (w // ww)
    if windows.shape[0] % num_windows != 0 or windows.shape[1] != wd * wh * ww:
        raise ValueError(
            f"window batch shape {tuple(windows.shape)} inconsistent with dims {dims}, window {window}")
    b = windows.shape[0] // num_windows
    c = windows.shape[2]
    x = windows.view(b, d // wd, h // wh, w // ww, wd, wh, ww, c)
    x = x.permute(0, 1, 4, 2, 5, 3, 6, 7).contiguous()
    return x.view(b, d, h, w, c)


def roll_grid(x: Tensor, shift: tuple[int, int, int]) -> Tensor:
    """Cyclic shift of the spatial axes of (B, D, H, W, C) (shifts mod dims)."""
    if shift == (0, 0, 0):
        return x
    return torch.roll(x, shifts=shift, dims=(1, 2, 3))


def pad_grid(x: Tensor, window: tuple[int, int, int]) -> tuple[Tensor, PadRecord]:
    """Zero-pad the high side of each spatial axis to a window multiple."""
    _, d, h, w, _ = x.shape
    pad = tuple((-n) % e for n, e in zip((d, h, w), window))
    if pad == (0, 0, 0):
        return x, PadRecord(pad)
    pd, ph, pw = pad
    # F.pad pads last dims first: (C, W, H, D) order.
    x = torch.nn.functional.pad(x, (0, 0, 0, pw, 0, ph, 0, pd))
    return x, PadRecord(pad)


def crop_grid(x: Tensor, record: PadRecord) -> Tensor:
    if record.empty:
        return x
    pd, ph, pw = record.pad
    _, d, h, w, _ = x.shape
    return x[:, :d - pd, :h - ph, :w - pw, :]


def _axis_region_ids(n: int, win: int, shift: int) -> Tensor:
    """Pre-shift region ids along one axis.

    Three contiguous segments [0, n-win), [n-win, n-shift), [n-shift, n);
    a zero-shift axis is a single segment.
    """
    ids = torch.zeros(n, dtype=torch.long)
    if shift > 0:
        ids[max(n - win, 0):] = 1
        ids[max(n - shift, 0):] = 2
    return ids


def region_id_grid(dims: tuple[int, int, int], spec: WindowSpec,
                   valid: Tensor | None = None) -> Tensor:
    """Pre-shift region ids for every token, composed multiplicatively per axis.

    ``valid`` is an optional (D, H, W) bool grid; invalid (padded) tokens
    get a dedicated id so they are masked away from every real token.
    """
    d, h, w = dims
    idd = _axis_region_ids(d, spec.window[0], spec.shift[0])
    idh = _axis_region_ids(h, spec.window[1], spec.shift[1])
    idw = _axis_region_ids(w, spec.window[2], spec.shift[2])
    ids = idd[:, None, None] * 9 + idh[None, :, None] * 3 + idw[None, None, :]
    if valid is not None:
        ids = ids.masked_fill(~valid, 27)
    return ids


def shift_attention_mask(dims: tuple[int, int, int], spec: WindowSpec,
                         valid: Tensor | None = None) -> Tensor:
    """Additive attention mask, shape (num_windows, T, T).

    Region ids are assigned on the pre-shift grid, cyclically shifted along
    with the tokens, and windowed; a pair gets ``MASK_VALUE`` iff the two
    tokens carry different region ids.
    """
    _check_divisible(dims, spec.window, "window extent")
    ids = region_id_grid(dims, spec, valid).to(torch.float32)
    ids = ids[None, ..., None]  # (1, D, H, W, 1)
    ids = roll_grid(ids, tuple(-s for s in spec.shift))
    win_ids = partition_windows(ids, spec.window).squeeze(-1)  # (nw, T)
    diff = win_ids[:, :, None] != win_ids[:, None, :]
    return torch.where(diff, torch.full((), MASK_VALUE), torch.zeros(()))


# ---------------------------------------------------------------------------
# TokenGrid-level surface used by tests and callers outside the hot path.
# ---------------------------------------------------------------------------

def patch_partition(volume: Volume, patch: tuple[int, int, int]) -> TokenGrid:
    x = torch.from_numpy(volume.values)[None]
    return TokenGrid(partition_patches(x, patch)[0])


def window_partition(grid: TokenGrid, spec: WindowSpec) -> WindowBatch:
    values = partition_windows(grid.values[None], spec.window)
    return WindowBatch(values=values, grid_dims=grid.dims, spec=spec)


def window_reverse(batch: WindowBatch) -> TokenGrid:
    x = reverse_windows(batch.values, batch.spec.window, batch.grid_dims.as_tuple())
    return TokenGrid(x[0])


def cyclic_shift(grid: TokenGrid, shift: tuple[int, int, int]) -> TokenGrid:
    return TokenGrid(roll_grid(grid.values[None], shift)[0])


def build_shift_mask(dims: GridDims, spec: WindowSpec) -> Tensor:
    return shift_attention_mask(dims.as_tuple(), spec)


def pad_to_window(grid: TokenGrid, spec: WindowSpec) -> tuple[TokenGrid, PadRecord]:
    x, record = pad_grid(grid.values[None], spec.window)
    return TokenGrid(x[0]), record


def crop_from_pad(grid: TokenGrid, record: PadRecord) -> TokenGrid:
    return TokenGrid(crop_grid(grid.values[None], record)[0])


def merge_neighborhoods(grid: TokenGrid) -> TokenGrid:
    """Halve every spatial axis, concatenating each 2x2x2 neighborhood (8C channels)."""
    d, h, w = grid.dims.as_tuple()
    if d % 2 or h % 2 or w % 2:
        raise ValueError(f"all dims must be even for merging, got {(d, h, w)}")
    return TokenGrid(partition_patches(grid.values[None], (2, 2, 2))[0])
