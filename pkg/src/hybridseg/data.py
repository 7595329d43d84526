"""Synthetic 3D segmentation dataset, intensity normalization, and the
CV2V binary volume format.

CV2V layout (little-endian throughout):

    magic   4 bytes  b"CV2V"
    version u16      currently 1
    dtype   u8       0 = float32 image, 1 = uint8 labels
    ndim    u8       3 or 4
    dims    ndim x u32
    spacing 3 x float32 (mm)
    payload raw voxels in raster order (d-major, then h, then w, then channel)

A (4,4,4) float volume therefore has a 32-byte header followed by 256
payload bytes.

Synthetic cases are randomized ellipsoid phantoms: a single lesion for
two-class problems, or a nested inner/outer zone pair for three-class
problems, with class-dependent mean intensities plus Gaussian noise. The
label is the noise-free geometry. Everything is a deterministic function
of (seed, case index).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .volume import LabelVolume, Volume

MAGIC = b"CV2V"
VERSION = 1

DEFAULT_RATIOS = (55, 20, 30)


class VolumeIOError(Exception):
    pass


class BadMagicError(VolumeIOError):
    pass


class UnsupportedVersionError(VolumeIOError):
    pass


class TruncatedFileError(VolumeIOError):
    pass


def normalize_intensity(values: np.ndarray) -> np.ndarray:
    """Affine map to [0, 1]; a constant volume maps to all zeros."""
    values = np.asarray(values, dtype=np.float32)
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def write_volume(path: str | Path, volume: Volume | LabelVolume):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(volume, LabelVolume):
        dtype_code, arr = 1, volume.values.astype(np.uint8)
    else:
        arr = volume.values.astype("<f4")
        if arr.shape[-1] == 1:
            arr = arr[..., 0]
        dtype_code = 0
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HBB", VERSION, dtype_code, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(struct.pack("<3f", *volume.spacing))
        f.write(np.ascontiguousarray(arr).tobytes())


def read_volume(path: str | Path) -> Volume | LabelVolume:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    version, dtype_code, ndim = struct.unpack("<HBB", raw[4:8])
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    header_end = 8 + 4 * ndim + 12
    if len(raw) < header_end:
        raise TruncatedFileError(f"{path}: truncated header")
    dims = struct.unpack(f"<{ndim}I", raw[8:8 + 4 * ndim])
    spacing = struct.unpack("<3f", raw[8 + 4 * ndim:header_end])
    itemsize = 4 if dtype_code == 0 else 1
    expected = int(np.prod(dims)) * itemsize
    payload = raw[header_end:]
    if len(payload) < expected:
        raise TruncatedFileError(
            f"{path}: expected {expected} payload bytes, found {len(payload)}")
    if dtype_code == 0:
        values = np.frombuffer(payload[:expected], dtype="<f4").reshape(dims)
        return Volume(values.copy(), spacing=spacing)
    if dtype_code == 1:
        values = np.frombuffer(payload[:expected], dtype=np.uint8).reshape(dims)
        return LabelVolume(values.astype(np.int64), spacing=spacing)
    raise VolumeIOError(f"{path}: unknown dtype code {dtype_code}")


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a reproducible synthetic dataset."""

    seed: int = 0
    shape: tuple[int, int, int] = (32, 32, 32)
    num_classes: int = 2
    noise_sigma: float = 0.05
    contrasts: tuple[float, ...] | None = None
    count: int = 20
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.num_classes not in (2, 3):
            raise ValueError("num_classes must be 2 (lesion) or 3 (nested zones)")
        if self.count < 1 or min(self.shape) < 8:
            raise ValueError("need count >= 1 and shape >= 8 per axis")
        if self.contrasts is not None and len(self.contrasts) != self.num_classes:
            raise ValueError("need one contrast per class")

    def class_contrasts(self) -> tuple[float, ...]:
        if self.contrasts is not None:
            return self.contrasts
        return (0.2, 0.8) if self.num_classes == 2 else (0.2, 0.55, 0.9)


@dataclass
class Case:
    case_id: str
    image: Volume
    label: LabelVolume
    seed: int


def _ellipsoid(shape, center, radii) -> np.ndarray:
    grids = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape), indexing="ij")
    acc = np.zeros(shape, dtype=np.float64)
    for g, c, r in zip(grids, center, radii):
        acc += ((g - c) / r) ** 2
    return acc <= 1.0


def generate_case(spec: SynthSpec, index: int) -> Case:
    if not 0 <= index < spec.count:
        raise ValueError(f"case index {index} outside 0..{spec.count - 1}")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index]))
    shape = np.asarray(spec.shape, dtype=np.float64)
    center = shape / 2 + rng.uniform(-shape / 10, shape / 10)
    outer = shape * rng.uniform(0.22, 0.38, size=3)
    label = np.zeros(spec.shape, dtype=np.int64)
    label[_ellipsoid(spec.shape, center, outer)] = 1
    if spec.num_classes == 3:
        # concentric with strictly smaller radii, so nesting is guaranteed
        inner = outer * rng.uniform(0.35, 0.55, size=3)
        label[_ellipsoid(spec.shape, center, inner)] = 2
    contrasts = np.asarray(spec.class_contrasts(), dtype=np.float32)
    image = contrasts[label]
    if spec.noise_sigma > 0:
        image = image + rng.normal(0.0, spec.noise_sigma, size=spec.shape).astype(np.float32)
    image = normalize_intensity(image)
    return Case(
        case_id=f"case_{index:03d}",
        image=Volume(image, spacing=spec.spacing),
        label=LabelVolume(label, spacing=spec.spacing),
        seed=spec.seed,
    )


def make_split(count: int, seed: int,
               ratios: tuple[int, int, int] = DEFAULT_RATIOS) -> tuple[list[str], list[str], list[str]]:
    """Deterministic disjoint exhaustive train/val/test split.

    Rounding rule: test = floor of its normalized share of the total, val =
    floor of its share of the remainder, train takes the rest.
    """
    r_train, r_val, r_test = ratios
    total = r_train + r_val + r_test
    if min(ratios) < 0 or total <= 0 or r_train == 0:
        raise ValueError(f"bad split ratios {ratios}")
    n_test = count * r_test // total
    n_val = (count - n_test) * r_val // (total - r_test)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0FFEE]))
    order = rng.permutation(count)
    ids = [f"case_{i:03d}" for i in order]
    n_train = count - n_val - n_test
    return ids[:n_train], ids[n_train:n_train + n_val], ids[n_train + n_val:]


def generate_dataset(spec: SynthSpec, out_dir: str | Path,
                     ratios: tuple[int, int, int] = DEFAULT_RATIOS) -> Path:
    """Writes images, labels, and a manifest; returns the manifest path."""
    out = Path(out_dir)
    train, val, test = make_split(spec.count, spec.seed, ratios)
    split_of = {cid: name for ids, name in ((train, "train"), (val, "val"), (test, "test"))
                for cid in ids}
    cases = []
    for i in range(spec.count):
        case = generate_case(spec, i)
        image_path = f"images/{case.case_id}.cv2v"
        label_path = f"labels/{case.case_id}.cv2v"
        write_volume(out / image_path, case.image)
        write_volume(out / label_path, case.label)
        cases.append({
            "id": case.case_id,
            "image": image_path,
            "label": label_path,
            "split": split_of[case.case_id],
        })
    manifest = {
        "num_classes": spec.num_classes,
        "shape": list(spec.shape),
        "spacing": list(spec.spacing),
        "seed": spec.seed,
        "cases": cases,
    }
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2)
    return manifest_path


@dataclass
class Dataset:
    root: Path
    num_classes: int
    cases: list[dict]

    def case_ids(self, split: str | None = None) -> list[str]:
        return [c["id"] for c in self.cases if split is None or c["split"] == split]

    def load_case(self, case_id: str) -> tuple[Volume, LabelVolume]:
        entry = next((c for c in self.cases if c["id"] == case_id), None)
        if entry is None:
            raise KeyError(f"unknown case id {case_id}")
        image = read_volume(self.root / entry["image"])
        label = read_volume(self.root / entry["label"])
        if not isinstance(image, Volume) or not isinstance(label, LabelVolume):
            raise VolumeIOError(f"case {case_id}: image/label dtype codes are swapped")
        return image, label


def load_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    with open(root / "manifest.json") as f:
        manifest = json.load(f)
    return Dataset(root=root, num_classes=manifest["num_classes"], cases=manifest["cases"])
