"""Self-describing checkpoint container.

Layout (all integers little-endian):

    bytes 0..7    magic b"HSEGCKP1"
    bytes 8..11   uint32 header length N
    bytes 12..    JSON header of N bytes (utf-8)
    then          raw float32 little-endian array payloads, concatenated in
                  the order listed under header["arrays"]

The JSON header carries the model config, the training step counter, the
RNG seed used for the run, free-form metadata, and one entry per named
weight array with its shape. Reloading reproduces bit-identical forward
outputs because weights round-trip as exact float32.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .cnn import CnnConfig
from .model import HybridSegNet, ModelConfig
from .swin import SwinEncoderConfig

MAGIC = b"HSEGCKP1"


class CheckpointError(Exception):
    pass


def config_to_dict(config: ModelConfig) -> dict[str, Any]:
    return dataclasses.asdict(config)


def config_from_dict(d: dict[str, Any]) -> ModelConfig:
    swin = dict(d["swin"])
    for key in ("patch_size", "heads", "window"):
        swin[key] = tuple(swin[key])
    return ModelConfig(
        swin=SwinEncoderConfig(**swin),
        cnn=CnnConfig(**d["cnn"]),
        in_channels=d["in_channels"],
        mode=d["mode"],
    )


def save_checkpoint(path: str | Path, model: HybridSegNet, *, step: int = 0,
                    seed: int = 0, metadata: dict[str, Any] | None = None):
    state = model.state_dict()
    arrays = []
    payloads = []
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        arrays.append({"name": name, "shape": list(arr.shape)})
        payloads.append(arr.tobytes())
    header = {
        "config": config_to_dict(model.config),
        "step": step,
        "seed": seed,
        "metadata": metadata or {},
        "arrays": arrays,
    }
    blob = json.dumps(header).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for payload in payloads:
            f.write(payload)


def load_checkpoint(path: str | Path) -> tuple[HybridSegNet, dict[str, Any]]:
    """Returns the reconstructed model and the checkpoint header."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:8]!r}")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen])
    model = HybridSegNet(config_from_dict(header["config"]))
    offset = 12 + hlen
    state = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated payload at array {entry['name']}")
        arr = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape)
        state[entry["name"]] = torch.from_numpy(arr.copy())
        offset = end
    model.load_state_dict(state)
    return model, header
