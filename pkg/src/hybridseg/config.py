"""Run configuration: a flat record covering model, data, and training
settings, loadable from a flat ``key=value`` file.

Every key in the file maps 1:1 to a RunConfig field. Comma lists become
tuples (``heads=3,6,12,24``), ``true``/``false`` become booleans, and
``#`` starts a comment. The ``HYBRIDSEG_OUTPUT_DIR`` environment variable
overrides ``out_dir``.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .cnn import CnnConfig
from .data import SynthSpec
from .model import ModelConfig
from .swin import SwinEncoderConfig

OUTPUT_DIR_ENV = "HYBRIDSEG_OUTPUT_DIR"


@dataclass
class RunConfig:
    # model
    mode: str = "hybrid"
    num_classes: int = 3
    in_channels: int = 1
    base_channels: int = 16
    levels: int = 5
    embed_dim: int = 24
    heads: tuple[int, ...] = (3, 6, 12, 24)
    num_stages: int = 4
    window: tuple[int, int, int] = (4, 4, 4)
    patch_size: tuple[int, int, int] = (2, 2, 2)
    mlp_ratio: float = 4.0
    use_relative_bias: bool = True

    # data: either a prepared dataset directory, or synth_* to generate one
    dataset_dir: str = ""
    synth_shape: tuple[int, int, int] = (32, 32, 32)
    synth_count: int = 20
    synth_noise: float = 0.05

    # training
    lr: float = 1e-4
    batch_size: int = 2
    max_steps: int = 200
    eval_every: int = 50
    early_stop_dice: float = 0.0  # 0 disables early stopping
    seed: int = 0
    threads: int = 1
    out_dir: str = "runs/run"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        env = os.environ.get(OUTPUT_DIR_ENV)
        if env:
            self.out_dir = env

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            swin=SwinEncoderConfig(
                patch_size=self.patch_size,
                embed_dim=self.embed_dim,
                heads=self.heads,
                window=self.window,
                mlp_ratio=self.mlp_ratio,
                use_relative_bias=self.use_relative_bias,
                num_stages=self.num_stages,
            ),
            cnn=CnnConfig(levels=self.levels, base_channels=self.base_channels,
                          num_classes=self.num_classes),
            in_channels=self.in_channels,
            mode=self.mode,
        )

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(seed=self.seed, shape=self.synth_shape,
                         num_classes=self.num_classes, noise_sigma=self.synth_noise,
                         count=self.synth_count)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value: str, annotation) -> object:
    origin = typing.get_origin(annotation)
    if origin is tuple:
        inner = typing.get_args(annotation)[0]
        return tuple(_coerce(part.strip(), inner) for part in value.split(","))
    if annotation is bool:
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    return annotation(value)


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    hints = typing.get_type_hints(RunConfig)
    values = dataclasses.asdict(base) if base else {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in fields:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _coerce(raw, hints[key])
    return RunConfig(**values)


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    return parse_config_text(Path(path).read_text(), base=base)
