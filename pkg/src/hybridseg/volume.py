"""Core voxel-grid containers shared by the data, model, and metrics layers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Volume:
    """Dense 3D scalar grid with a trailing channel axis and physical spacing.

    ``values`` has shape (D, H, W, C); ``spacing`` is the per-axis voxel
    size in millimetres.
    """

    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim == 3:
            self.values = self.values[..., None]
        if self.values.ndim != 4:
            raise ValueError(f"volume values must be (D,H,W,C), got shape {self.values.shape}")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be positive, got {self.spacing}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape[:3]

    @property
    def channels(self) -> int:
        return self.values.shape[3]


@dataclass
class LabelVolume:
    """Integer class-id grid of shape (D, H, W) with physical spacing."""

    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if not np.issubdtype(self.values.dtype, np.integer):
            raise ValueError(f"label values must be integer, got dtype {self.values.dtype}")
        if self.values.ndim != 3:
            raise ValueError(f"label values must be (D,H,W), got shape {self.values.shape}")
        if self.values.size and self.values.min() < 0:
            raise ValueError("label values must be non-negative")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be positive, got {self.spacing}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape
