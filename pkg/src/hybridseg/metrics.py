"""Volumetric segmentation metrics: Dice overlap, average surface distance
(ASD) and 95th-percentile Hausdorff distance (HD95), with "mean (std)"
aggregation for reporting.

Conventions (fixed, since edge cases are otherwise ambiguous):
  - Dice of two empty masks is 1.0; empty vs non-empty is 0.0.
  - Surfaces use 6-connectivity: a voxel is boundary iff it is foreground
    and at least one face neighbor is background or out of bounds.
  - Distances are between voxel centers in physical millimetres.
  - ASD is the mean of the pooled bidirectional nearest-surface distances;
    HD95 the 95th percentile of the same pool, linearly interpolated
    between closest ranks.
  - Distance metrics are undefined when either surface is empty; such
    cases are excluded from aggregation and counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .volume import LabelVolume


def dice(pred: LabelVolume, gt: LabelVolume, klass: int) -> float:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    a = pred.values == klass
    b = gt.values == klass
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 and nb == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / (na + nb)


def extract_surface(mask: np.ndarray, spacing: tuple[float, float, float]) -> np.ndarray:
    """Boundary voxel centers in mm, shape (N, 3). ``mask`` is a bool grid."""
    mask = np.asarray(mask, dtype=bool)
    interior = np.ones_like(mask)
    for axis in range(3):
        padded = np.pad(mask, [(1, 1) if ax == axis else (0, 0) for ax in range(3)])
        lo = np.take(padded, range(0, mask.shape[axis]), axis=axis)
        hi = np.take(padded, range(2, mask.shape[axis] + 2), axis=axis)
        interior &= lo & hi
    boundary = mask & ~interior
    idx = np.argwhere(boundary).astype(np.float64)
    return idx * np.asarray(spacing, dtype=np.float64)


def _pooled_surface_distances(pred_mask: np.ndarray, gt_mask: np.ndarray,
                              spacing: tuple[float, float, float]) -> np.ndarray | None:
    """Bidirectional nearest-neighbor distances between the two surfaces,
    pooled into one array; None when either surface is empty."""
    sp = extract_surface(pred_mask, spacing)
    sg = extract_surface(gt_mask, spacing)
    if len(sp) == 0 or len(sg) == 0:
        return None
    return np.concatenate([_directed_nearest(sp, sg), _directed_nearest(sg, sp)])


def _directed_nearest(src: np.ndarray, dst: np.ndarray,
                      chunk: int = 512) -> np.ndarray:
    """Nearest-neighbor Euclidean distance from each src point to dst.

    Plain squared-difference sums, chunked to bound the (N, M) distance
    block in memory.
    """
    out = np.empty(len(src))
    for start in range(0, len(src), chunk):
        block = src[start:start + chunk, None, :] - dst[None, :, :]
        d2 = (block ** 2).sum(axis=-1)
        out[start:start + chunk] = np.sqrt(d2.min(axis=1))
    return out


def percentile_95(values: np.ndarray) -> float:
    """95th percentile, linear interpolation between closest ranks.

    With n sorted values the virtual rank is 0.95 * (n - 1); the result is
    v[lo] + frac * (v[hi] - v[lo]) for lo = floor(rank), hi = lo + 1.
    """
    ranked = np.sort(np.asarray(values, dtype=np.float64))
    n = len(ranked)
    if n == 0:
        raise ValueError("percentile of an empty set")
    pos = 0.95 * (n - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return float(ranked[lo] + (ranked[hi] - ranked[lo]) * frac)


def asd(pred: LabelVolume, gt: LabelVolume, klass: int) -> float | None:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    pool = _pooled_surface_distances(pred.values == klass, gt.values == klass, gt.spacing)
    return None if pool is None else float(pool.mean())


def hd95(pred: LabelVolume, gt: LabelVolume, klass: int) -> float | None:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    pool = _pooled_surface_distances(pred.values == klass, gt.values == klass, gt.spacing)
    return None if pool is None else percentile_95(pool)


@dataclass
class ClassMetrics:
    dice: float
    asd_mm: float | None
    hd95_mm: float | None


@dataclass
class CaseMetrics:
    case_id: str
    per_class: dict[int, ClassMetrics]


def evaluate_case(case_id: str, pred: LabelVolume, gt: LabelVolume,
                  num_classes: int) -> CaseMetrics:
    """All three metrics for every foreground class (1..K-1)."""
    per_class = {}
    for k in range(1, num_classes):
        pool = _pooled_surface_distances(pred.values == k, gt.values == k, gt.spacing)
        per_class[k] = ClassMetrics(
            dice=dice(pred, gt, k),
            asd_mm=None if pool is None else float(pool.mean()),
            hd95_mm=None if pool is None else percentile_95(pool),
        )
    return CaseMetrics(case_id=case_id, per_class=per_class)


def mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())  # population std


def format_mean_std(mean: float, std: float) -> str:
    return f"{mean:.3f} ({std:.3f})"


COLUMNS = ("case_id", "class", "dice", "asd_mm", "hd95_mm")


@dataclass
class MetricsReport:
    """Per-case rows plus mean (std) aggregates per class and overall."""

    cases: list[CaseMetrics]
    num_classes: int
    errors: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.cases and not self.errors:
            raise ValueError("cannot aggregate an empty case list")

    def _column(self, klass: int, metric: str) -> list[float]:
        out = []
        for case in self.cases:
            v = getattr(case.per_class[klass], metric)
            if v is not None:
                out.append(v)
        return out

    def excluded(self, klass: int, metric: str) -> int:
        return sum(1 for c in self.cases if getattr(c.per_class[klass], metric) is None)

    def aggregate(self, klass: int, metric: str) -> tuple[float, float]:
        vals = self._column(klass, metric)
        if not vals:
            return float("nan"), float("nan")
        return mean_std(vals)

    def overall(self, metric: str) -> tuple[float, float]:
        vals = []
        for k in range(1, self.num_classes):
            vals.extend(self._column(k, metric))
        if not vals:
            return float("nan"), float("nan")
        return mean_std(vals)

    def mean_dice(self, klass: int | None = None) -> float:
        if klass is None:
            return self.overall("dice")[0]
        return self.aggregate(klass, "dice")[0]

    def to_rows(self) -> list[tuple]:
        """Machine-readable table, one row per (case, class), column order
        as in ``COLUMNS``; undefined distances render as None."""
        rows = []
        for case in self.cases:
            for k in sorted(case.per_class):
                m = case.per_class[k]
                rows.append((case.case_id, k, m.dice, m.asd_mm, m.hd95_mm))
        return rows

    def to_dict(self) -> dict:
        summary = {}
        for k in range(1, self.num_classes):
            summary[str(k)] = {
                metric: {
                    "mean": self.aggregate(k, metric)[0],
                    "std": self.aggregate(k, metric)[1],
                    "excluded": self.excluded(k, metric),
                }
                for metric in ("dice", "asd_mm", "hd95_mm")
            }
        return {
            "columns": list(COLUMNS),
            "rows": [list(r) for r in self.to_rows()],
            "per_class": summary,
            "overall": {m: dict(zip(("mean", "std"), self.overall(m)))
                        for m in ("dice", "asd_mm", "hd95_mm")},
            "errors": self.errors,
        }

    def render(self) -> str:
        lines = []
        for k in range(1, self.num_classes):
            parts = []
            for metric, label in (("dice", "Dice"), ("asd_mm", "ASD"), ("hd95_mm", "HD95")):
                m, s = self.aggregate(k, metric)
                text = format_mean_std(m, s)
                excluded = self.excluded(k, metric)
                if excluded:
                    text += f" [{excluded} excluded]"
                parts.append(f"{label} {text}")
            lines.append(f"class {k}: " + "  ".join(parts))
        m, s = self.overall("dice")
        lines.append(f"overall: Dice {format_mean_std(m, s)}")
        for err in self.errors:
            lines.append(f"error: {err}")
        return "\n".join(lines)
