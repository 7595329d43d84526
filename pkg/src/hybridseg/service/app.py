"""FastAPI service wrapping dataset generation, training, evaluation,
ablation, prediction, and the oracle-check suites.

Payloads exchange file paths on disk (datasets, checkpoints, volumes),
not raw tensors; the heavy lifting stays in the core package.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..checks import SUITES, run_suite
from ..config import RunConfig, parse_config_text
from ..data import SynthSpec, generate_dataset, load_dataset
from ..train import TrainingDiverged, ablate, evaluate_checkpoint, predict_file, train
from .schemas import (
    AblateResponse,
    CheckItem,
    CheckResponse,
    EvalRequest,
    EvalSummary,
    GenerateRequest,
    GenerateResponse,
    PredictRequest,
    PredictResponse,
    TrainRequest,
    TrainResponse,
)


def _run_config(req: TrainRequest) -> RunConfig:
    config = RunConfig()
    if req.config_text:
        config = parse_config_text(req.config_text, base=config)
    if req.overrides:
        text = "\n".join(f"{k}={v}" for k, v in req.overrides.items())
        config = parse_config_text(text, base=config)
    return config


def create_app() -> FastAPI:
    app = FastAPI(title="hybridseg", version=__version__)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/generate", response_model=GenerateResponse)
    def generate(req: GenerateRequest) -> GenerateResponse:
        try:
            spec = SynthSpec(seed=req.seed, shape=req.shape, num_classes=req.num_classes,
                             noise_sigma=req.noise_sigma, count=req.count)
            manifest = generate_dataset(spec, req.out_dir)
        except (ValueError, OSError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        dataset = load_dataset(req.out_dir)
        splits = {name: len(dataset.case_ids(name)) for name in ("train", "val", "test")}
        return GenerateResponse(manifest=str(manifest), num_cases=req.count, splits=splits)

    @app.post("/train", response_model=TrainResponse)
    def train_run(req: TrainRequest) -> TrainResponse:
        try:
            result = train(_run_config(req))
        except TrainingDiverged as exc:
            raise HTTPException(status_code=422, detail=f"diverged: {exc}")
        except (ValueError, OSError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return TrainResponse(
            checkpoint=str(result.checkpoint_path),
            best_checkpoint=str(result.best_checkpoint_path),
            final_loss=result.final_loss,
            final_step=result.log.final_step,
            wall_seconds=result.log.wall_seconds,
            evals=result.log.evals,
        )

    @app.post("/eval", response_model=EvalSummary)
    def eval_run(req: EvalRequest) -> EvalSummary:
        try:
            report = evaluate_checkpoint(req.checkpoint, req.dataset_dir, req.split)
        except (ValueError, OSError, KeyError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return EvalSummary(**report.to_dict(), rendered=report.render())

    @app.post("/ablate", response_model=AblateResponse)
    def ablate_run(req: TrainRequest) -> AblateResponse:
        try:
            result = ablate(_run_config(req))
        except (ValueError, OSError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return AblateResponse(**result)

    @app.post("/predict", response_model=PredictResponse)
    def predict_run(req: PredictRequest) -> PredictResponse:
        try:
            out = predict_file(req.checkpoint, req.image, req.output)
        except (ValueError, OSError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return PredictResponse(output=str(out))

    @app.post("/check/{suite}", response_model=CheckResponse)
    def check_run(suite: str, seed: int = 0) -> CheckResponse:
        if suite not in SUITES:
            raise HTTPException(status_code=404,
                                detail=f"unknown suite {suite!r}; choose from {SUITES}")
        results = run_suite(suite, seed=seed)
        return CheckResponse(
            suite=suite,
            passed=all(r.passed for r in results),
            results=[CheckItem(name=r.name, passed=r.passed, detail=r.detail)
                     for r in results],
        )

    return app


app = create_app()
