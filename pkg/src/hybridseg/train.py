"""Training loop, evaluation driver, and the single-encoder ablation study.

Training is deterministic for a fixed seed on the single-threaded math
path: the math thread count, all RNG seeding, and batch sampling are
derived from the run config.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import Dataset, generate_dataset, load_dataset, read_volume, write_volume
from .metrics import MetricsReport, evaluate_case
from .model import HybridSegNet, predict_volume, segmentation_loss
from .volume import LabelVolume, Volume


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class RunLog:
    config: dict
    losses: list[float] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    wall_seconds: float = 0.0
    final_step: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainResult:
    checkpoint_path: Path
    best_checkpoint_path: Path
    log: RunLog

    @property
    def final_loss(self) -> float:
        return self.log.losses[-1]


def _resolve_dataset(config: RunConfig) -> Dataset:
    if config.dataset_dir:
        return load_dataset(config.dataset_dir)
    root = Path(config.out_dir) / "dataset"
    if not (root / "manifest.json").exists():
        generate_dataset(config.synth_spec(), root)
    return load_dataset(root)


def _stack_cases(dataset: Dataset, ids: list[str]) -> tuple[torch.Tensor, torch.Tensor]:
    images, labels = [], []
    for cid in ids:
        image, label = dataset.load_case(cid)
        images.append(torch.from_numpy(image.values).permute(3, 0, 1, 2))
        labels.append(torch.from_numpy(label.values))
    return torch.stack(images).float(), torch.stack(labels).long()


def evaluate_model(model: HybridSegNet, dataset: Dataset, split: str | None,
                   num_classes: int | None = None,
                   case_ids: list[str] | None = None) -> MetricsReport:
    """Predicts every case in the split and scores it; per-case failures are
    recorded and the run continues."""
    k = num_classes or dataset.num_classes
    cases, errors = [], []
    for cid in case_ids if case_ids is not None else dataset.case_ids(split):
        try:
            image, label = dataset.load_case(cid)
            pred = predict_volume(model, image)
            cases.append(evaluate_case(cid, pred, label, k))
        except Exception as exc:  # noqa: BLE001 - per-case isolation is the contract
            errors.append(f"{cid}: {exc}")
    return MetricsReport(cases=cases, num_classes=k, errors=errors)


def train(config: RunConfig) -> TrainResult:
    torch.set_num_threads(max(1, config.threads))
    torch.manual_seed(config.seed)
    start = time.monotonic()

    dataset = _resolve_dataset(config)
    train_ids = dataset.case_ids("train") or dataset.case_ids(None)
    # with no validation cases, checkpoint selection falls back to train Dice
    val_ids = dataset.case_ids("val") or train_ids
    images, labels = _stack_cases(dataset, train_ids)

    model = HybridSegNet(config.model_config())
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    sampler = torch.Generator().manual_seed(config.seed)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    final_path = out_dir / "final.ckpt"
    best_path = out_dir / "best.ckpt"

    log = RunLog(config=config.to_dict())
    best_dice = -1.0
    step = 0
    for step in range(1, config.max_steps + 1):
        idx = torch.randint(len(train_ids), (min(config.batch_size, len(train_ids)),),
                            generator=sampler)
        logits = model(images[idx])
        loss = segmentation_loss(logits, labels[idx])
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss.item()} at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        log.losses.append(float(loss.item()))

        if config.eval_every and step % config.eval_every == 0:
            report = evaluate_model(model, dataset, None, case_ids=val_ids)
            per_class = [report.mean_dice(k) for k in range(1, dataset.num_classes)]
            mean_dice = report.mean_dice()
            log.evals.append({"step": step, "mean_dice": mean_dice,
                              "per_class_dice": per_class})
            if mean_dice > best_dice:  # ties keep the earlier checkpoint
                best_dice = mean_dice
                save_checkpoint(best_path, model, step=step, seed=config.seed,
                                metadata={"val_mean_dice": mean_dice})
            model.train()
            if config.early_stop_dice and per_class and \
                    min(per_class) >= config.early_stop_dice:
                break

    log.final_step = step
    log.wall_seconds = time.monotonic() - start
    save_checkpoint(final_path, model, step=step, seed=config.seed,
                    metadata={"final_loss": log.losses[-1] if log.losses else None})
    if not best_path.exists():
        save_checkpoint(best_path, model, step=step, seed=config.seed, metadata={})
    with open(out_dir / "runlog.json", "w") as f:
        json.dump(log.to_dict(), f, indent=2)
    return TrainResult(checkpoint_path=final_path, best_checkpoint_path=best_path, log=log)


def evaluate_checkpoint(checkpoint_path: str | Path, dataset_dir: str | Path,
                        split: str | None = "test") -> MetricsReport:
    model, _ = load_checkpoint(checkpoint_path)
    dataset = load_dataset(dataset_dir)
    return evaluate_model(model, dataset, split)


def predict_file(checkpoint_path: str | Path, image_path: str | Path,
                 out_path: str | Path) -> Path:
    model, _ = load_checkpoint(checkpoint_path)
    image = read_volume(image_path)
    if isinstance(image, LabelVolume):
        raise ValueError(f"{image_path} holds labels, not an image volume")
    label = predict_volume(model, image)
    write_volume(out_path, label)
    return Path(out_path)


def ablate(config: RunConfig) -> dict:
    """Trains hybrid, cnn_only, and swin_only under identical seeds and
    budgets, evaluates each on the test split, and reports hybrid-minus-
    ablation Dice deltas (direction only, not asserted)."""
    reports: dict[str, MetricsReport] = {}
    for mode in ("hybrid", "cnn_only", "swin_only"):
        run_cfg = dataclasses.replace(config, mode=mode,
                                      out_dir=str(Path(config.out_dir) / mode))
        result = train(run_cfg)
        dataset = _resolve_dataset(run_cfg)
        model, _ = load_checkpoint(result.best_checkpoint_path)
        reports[mode] = evaluate_model(model, dataset, "test")
    hybrid_dice = reports["hybrid"].mean_dice()
    deltas = {mode: hybrid_dice - reports[mode].mean_dice()
              for mode in ("cnn_only", "swin_only")}
    return {
        "reports": {mode: r.to_dict() for mode, r in reports.items()},
        "summaries": {mode: r.render() for mode, r in reports.items()},
        "hybrid_minus": deltas,
    }
