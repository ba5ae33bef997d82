"""HTTP front end holding one sequential adaptation session.

Adaptation is stateful: each /enhance call may move the weights that the next
call uses, so requests are serialized through a lock.
"""

from __future__ import annotations

import math
import threading
from dataclasses import asdict

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..adapter import AdaptationSession, AdaptConfig, UtteranceReport
from ..dsp import AudioClip, StftConfig, stft
from ..errors import ConfigError, DataError, MPolError, NumericalError
from ..metrics import DEFAULT_EDGES, bimodality, mask_histogram
from ..model import MaskNet, features
from .schemas import (
    Audio,
    ConfigModel,
    EnhanceRequest,
    EnhanceResponse,
    ErrorResponse,
    HistogramRequest,
    HistogramResponse,
    LossModel,
    StatusResponse,
    UtteranceReportModel,
)

_STATUS = {ConfigError: 400, DataError: 422, NumericalError: 500}


def _finite_or_none(x: float) -> float | None:
    return x if math.isfinite(x) else None


def _report_model(rep: UtteranceReport) -> UtteranceReportModel:
    return UtteranceReportModel(
        losses=[LossModel(**asdict(l)) for l in rep.losses],
        neg_bin_count=rep.neg_bin_count,
        bimodality_m=_finite_or_none(rep.bimodality_m),
        bimodality_mp=_finite_or_none(rep.bimodality_mp),
        wall_time=rep.wall_time,
        skipped=rep.skipped,
        error=rep.error,
    )


def create_app(net: MaskNet, cfg: AdaptConfig = AdaptConfig(), stft_cfg: StftConfig = StftConfig()) -> FastAPI:
    if net.input_dim != stft_cfg.n_bins:
        raise ConfigError(f"model expects {net.input_dim} bins, STFT gives {stft_cfg.n_bins}")
    app = FastAPI(title="mpol", description="Online test-time adaptation for mask-based enhancement")
    session = AdaptationSession(net, cfg, stft_cfg)
    lock = threading.Lock()
    app.state.session = session

    @app.exception_handler(MPolError)
    async def _mpol_error(request: Request, exc: MPolError):
        status = next((code for kind, code in _STATUS.items() if isinstance(exc, kind)), 500)
        body = ErrorResponse(error=type(exc).__name__, detail=str(exc), exit_code=exc.exit_code)
        return JSONResponse(status_code=status, content=body.model_dump())

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.get("/status", response_model=StatusResponse)
    def status() -> StatusResponse:
        with lock:
            p = session.net.params
            idx = p.adaptable_index
            drift = float(np.max(np.abs(p.theta[idx] - p.theta0[idx]))) if idx.size else 0.0
            return StatusResponse(
                utterances_adapted=session.utterances,
                n_params=session.net.n_params,
                n_adaptable=p.n_adaptable,
                drift=drift,
                config=ConfigModel(**asdict(session.cfg), **asdict(session.stft_cfg)),
            )

    @app.post("/enhance", response_model=EnhanceResponse)
    def enhance_route(req: EnhanceRequest) -> EnhanceResponse:
        clip = AudioClip(np.asarray(req.samples, dtype=np.float64), req.sample_rate)
        with lock:
            out, rep = session.process(clip, adapt=req.adapt)
            n = session.utterances
        return EnhanceResponse(
            audio=Audio(samples=out.samples.tolist(), sample_rate=out.sample_rate),
            report=_report_model(rep),
            utterances_adapted=n,
        )

    @app.post("/reset", response_model=StatusResponse)
    def reset() -> StatusResponse:
        with lock:
            session.reset()
        return status()

    @app.post("/histogram", response_model=HistogramResponse)
    def histogram(req: HistogramRequest) -> HistogramResponse:
        clip = AudioClip(np.asarray(req.samples, dtype=np.float64), req.sample_rate)
        edges = DEFAULT_EDGES if req.edges is None else np.asarray(req.edges)
        try:
            with lock:
                mask, _ = session.net.forward(features(stft(clip, session.stft_cfg).magnitude))
            hist = mask_histogram(mask, edges)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        try:
            bc = bimodality(mask)
        except DataError:
            bc = None
        return HistogramResponse(
            bin_edges=hist.bin_edges.tolist(),
            counts=hist.counts.tolist(),
            underflow=hist.underflow,
            overflow=hist.overflow,
            bimodality=bc,
        )

    return app
