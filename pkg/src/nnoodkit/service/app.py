"""FastAPI service exposing the toolkit commands over HTTP.

Endpoints operate on dataset directories local to the server process; the
CLI dispatches to the same handlers in-process by default.
"""
from __future__ import annotations

import logging

from fastapi import FastAPI, HTTPException

from .. import __version__, pipeline
from ..errors import NnoodkitError
from .schemas import (
    CalibrateRequest,
    CalibrateResponse,
    EvaluateRequest,
    EvaluateResponse,
    GenerateRequest,
    GenerateResponse,
    HealthResponse,
    InspectRequest,
    InspectResponse,
    PlanRequest,
    PlanResponse,
)

logger = logging.getLogger(__name__)


def handle_plan(request: PlanRequest) -> PlanResponse:
    result = pipeline.run_plan(request.dataset_dir, request.out_path)
    return PlanResponse(**result)


def handle_calibrate(request: CalibrateRequest) -> CalibrateResponse:
    result = pipeline.run_calibrate(
        request.dataset_dir, request.task, request.plan_path, request.seed, request.out_path
    )
    return CalibrateResponse(**result)


def handle_generate(request: GenerateRequest) -> GenerateResponse:
    result = pipeline.run_generate(
        request.dataset_dir,
        request.task,
        request.plan_path,
        request.params_path,
        request.count,
        request.seed,
        request.out_dir,
        request.jobs,
    )
    return GenerateResponse(**result)


def handle_evaluate(request: EvaluateRequest) -> EvaluateResponse:
    result = pipeline.run_evaluate(request.pred_dir, request.gt_dir, request.out_path)
    return EvaluateResponse(**result)


def handle_inspect(request: InspectRequest) -> InspectResponse:
    result = pipeline.run_inspect(
        request.dataset_dir,
        request.task,
        request.plan_path,
        request.params_path,
        request.n,
        request.seed,
        request.out_dir,
    )
    return InspectResponse(**result)


def create_app() -> FastAPI:
    app = FastAPI(title="nnoodkit", version=__version__)

    def guarded(handler, request):
        try:
            return handler(request)
        except NnoodkitError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except (FileNotFoundError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/plan", response_model=PlanResponse)
    def plan(request: PlanRequest) -> PlanResponse:
        return guarded(handle_plan, request)

    @app.post("/calibrate", response_model=CalibrateResponse)
    def calibrate(request: CalibrateRequest) -> CalibrateResponse:
        return guarded(handle_calibrate, request)

    @app.post("/generate", response_model=GenerateResponse)
    def generate(request: GenerateRequest) -> GenerateResponse:
        return guarded(handle_generate, request)

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate(request: EvaluateRequest) -> EvaluateResponse:
        return guarded(handle_evaluate, request)

    @app.post("/inspect", response_model=InspectResponse)
    def inspect(request: InspectRequest) -> InspectResponse:
        return guarded(handle_inspect, request)

    return app


app = create_app()
