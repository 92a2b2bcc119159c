"""Request/response models for the HTTP service and the CLI client."""
from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

TaskName = Literal["fpi", "cutpaste", "pii", "nsa", "nsa-mixed"]


class HealthResponse(BaseModel):
    status: str
    version: str


class PlanRequest(BaseModel):
    dataset_dir: str
    out_path: Optional[str] = None


class PlanResponse(BaseModel):
    plan: dict
    path: str


class CalibrateRequest(BaseModel):
    dataset_dir: str
    task: TaskName
    plan_path: str
    seed: int = 0
    out_path: Optional[str] = None


class CalibrateResponse(BaseModel):
    params: dict
    path: str


class GenerateRequest(BaseModel):
    dataset_dir: str
    task: TaskName
    plan_path: str
    params_path: str
    count: int = Field(ge=1)
    seed: int = 0
    out_dir: str
    jobs: Optional[int] = Field(default=None, ge=1)


class GenerateFailure(BaseModel):
    index: int
    error: str


class GenerateResponse(BaseModel):
    out_dir: str
    written: list[str]
    failures: list[GenerateFailure]


class EvaluateRequest(BaseModel):
    pred_dir: str
    gt_dir: str
    out_path: Optional[str] = None


class EvaluateResponse(BaseModel):
    metrics: dict
    path: str


class InspectRequest(BaseModel):
    dataset_dir: str
    task: TaskName
    plan_path: str
    params_path: str
    n: int = Field(default=1, ge=1)
    seed: int = 0
    out_dir: str


class InspectResponse(BaseModel):
    out_dir: str
    panels: list[str]
