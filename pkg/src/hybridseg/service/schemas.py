"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class GenerateRequest(BaseModel):
    out_dir: str
    seed: int = 0
    shape: tuple[int, int, int] = (32, 32, 32)
    num_classes: int = Field(default=2, ge=2, le=3)
    noise_sigma: float = 0.05
    count: int = Field(default=20, ge=1)


class GenerateResponse(BaseModel):
    manifest: str
    num_cases: int
    splits: dict[str, int]


class TrainRequest(BaseModel):
    """Flat run configuration; unset keys fall back to RunConfig defaults."""

    overrides: dict[str, str] = {}
    config_text: str | None = None


class EvalSummary(BaseModel):
    columns: list[str]
    rows: list[list]
    per_class: dict
    overall: dict
    errors: list[str]
    rendered: str


class TrainResponse(BaseModel):
    checkpoint: str
    best_checkpoint: str
    final_loss: float
    final_step: int
    wall_seconds: float
    evals: list[dict]


class EvalRequest(BaseModel):
    checkpoint: str
    dataset_dir: str
    split: str | None = "test"


class AblateResponse(BaseModel):
    reports: dict[str, dict]
    summaries: dict[str, str]
    hybrid_minus: dict[str, float]


class PredictRequest(BaseModel):
    checkpoint: str
    image: str
    output: str


class PredictResponse(BaseModel):
    output: str


class CheckItem(BaseModel):
    name: str
    passed: bool
    detail: str = ""


class CheckResponse(BaseModel):
    suite: str
    passed: bool
    results: list[CheckItem]
