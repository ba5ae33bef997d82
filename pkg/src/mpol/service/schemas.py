"""Request/response models for the adaptation service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class Audio(BaseModel):
    samples: list[float] = Field(..., min_length=1, description="mono samples in [-1, 1]")
    sample_rate: int = Field(..., gt=0)


class EnhanceRequest(Audio):
    adapt: bool = Field(True, description="take adaptation steps on this utterance after enhancing it")


class LossModel(BaseModel):
    l_w: float
    l_s: float
    total: float
    lam: float


class UtteranceReportModel(BaseModel):
    losses: list[LossModel]
    neg_bin_count: int
    bimodality_m: Optional[float]
    bimodality_mp: Optional[float]
    wall_time: float
    skipped: bool
    error: Optional[str] = None


class EnhanceResponse(BaseModel):
    audio: Audio
    report: UtteranceReportModel
    utterances_adapted: int


class HistogramRequest(Audio):
    edges: Optional[list[float]] = Field(None, min_length=2)


class HistogramResponse(BaseModel):
    bin_edges: list[float]
    counts: list[int]
    underflow: int
    overflow: int
    bimodality: Optional[float]


class ConfigModel(BaseModel):
    lam: float
    beta: float
    k: int
    learning_rate: float
    steps_per_utterance: int
    beta1: float
    beta2: float
    epsilon: float
    weight_decay: float
    shelf_reduction: str
    fft_size: int
    hop: int
    window: str


class StatusResponse(BaseModel):
    utterances_adapted: int
    n_params: int
    n_adaptable: int
    drift: float = Field(..., description="max |theta - theta0| over the adaptable parameters")
    config: ConfigModel


class ErrorResponse(BaseModel):
    error: str
    detail: str
    exit_code: int
