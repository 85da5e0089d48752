"""FastAPI application wrapping the core library.

Every endpoint is a thin translation layer: decode the request, call the
corresponding library function, shape the result.  Domain errors surface as
HTTP 400 with a stable ``error`` kind so clients (including our own CLI)
can map them to exit codes without parsing prose.
"""

from __future__ import annotations

import base64
import binascii
import io
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..bench import bench_run
from ..errors import (ConfigError, ImageFormatError, LgmError, ShapeError,
                      TrainingDivergedError, WeightFileError)
from ..heatmap import decode_heatmaps
from ..imageio import bilinear_resize, load_image_bytes, to_model_input
from ..model import (ModelConfig, build_model, cost_table, forward_eval,
                     init_weights, plan_layers, reference_config, toy_config)
from ..selftest import run_selftest
from ..train import train_toy
from ..weights import load_weights_from_bytes
from .schemas import (BenchRequest, BenchResponse, CountRequest,
                      CountResponse, HealthResponse, InferRequest,
                      InferResponse, LayerCost, SelftestRequest,
                      SelftestResponse, SuiteReport, TrainToyRequest,
                      TrainToyResponse)

_ERROR_KINDS = (
    (ConfigError, "config"),
    (WeightFileError, "weights"),
    (ImageFormatError, "image"),
    (TrainingDivergedError, "training"),
    (ShapeError, "shape"),
)


def _error_kind(exc: LgmError) -> str:
    for cls, kind in _ERROR_KINDS:
        if isinstance(exc, cls):
            return kind
    return "internal"


def _resolve_config(d: Optional[dict], default=reference_config,
                    input_size=None) -> ModelConfig:
    cfg = default() if d is None else ModelConfig.from_dict(d)
    if input_size is not None:
        cfg = cfg.with_input_size(*input_size)
    return cfg


def _b64(field: str, value: str, err_cls) -> bytes:
    try:
        return base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError) as e:
        raise err_cls(f"{field} is not valid base64: {e}") from e


def create_app() -> FastAPI:
    app = FastAPI(title="lgm-pose", version=__version__)

    @app.exception_handler(LgmError)
    async def domain_error(request: Request, exc: LgmError) -> JSONResponse:
        return JSONResponse(status_code=400,
                            content={"error": _error_kind(exc),
                                     "detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    async def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/count", response_model=CountResponse)
    async def count(req: CountRequest) -> CountResponse:
        cfg = _resolve_config(req.config, input_size=req.input_size)
        plans = plan_layers(cfg)
        entries = cost_table(cfg)
        params = sum(e.params for e in entries)
        macs = sum(e.macs for e in entries)
        return CountResponse(
            config_digest=cfg.digest(),
            input_size=cfg.input_size,
            params=params, macs=macs, flops=macs,
            heatmap_size=(plans[-1].h_out, plans[-1].w_out),
            layers=[LayerCost(name=e.name, kind=e.kind,
                              params=e.params, macs=e.macs)
                    for e in entries])

    @app.post("/bench", response_model=BenchResponse)
    async def bench(req: BenchRequest) -> BenchResponse:
        cfg = _resolve_config(req.config)
        report = bench_run(cfg, input_size=req.input_size, warmup=req.warmup,
                           iters=req.iters, threads=req.threads, seed=req.seed)
        return BenchResponse(**report.to_dict())

    @app.post("/infer", response_model=InferResponse)
    async def infer(req: InferRequest) -> InferResponse:
        cfg = _resolve_config(req.config)
        image = load_image_bytes(_b64("image_b64", req.image_b64,
                                      ImageFormatError))
        model = build_model(cfg)
        if req.weights_b64 is not None:
            load_weights_from_bytes(
                model, _b64("weights_b64", req.weights_b64, WeightFileError))
        else:
            init_weights(model, req.seed)
        in_h, in_w = cfg.input_size
        orig_h, orig_w = image.shape[1], image.shape[2]
        resized = bilinear_resize(image, in_h, in_w)
        x = to_model_input(resized, cfg.mean, cfg.std, model.dtype)
        hm = forward_eval(model, x, threads=req.threads)
        kps = decode_heatmaps(hm)
        sx = cfg.heatmap_stride * (orig_w / in_w)
        sy = cfg.heatmap_stride * (orig_h / in_h)
        keypoints = [(float(x0 * sx), float(y0 * sy), float(s))
                     for (x0, y0), s in zip(kps.coords, kps.scores)]
        heatmaps_b64 = None
        if req.return_heatmaps:
            buf = io.BytesIO()
            np.save(buf, hm.data)
            heatmaps_b64 = base64.b64encode(buf.getvalue()).decode("ascii")
        return InferResponse(
            keypoints=keypoints,
            image_size=(orig_h, orig_w),
            input_size=cfg.input_size,
            heatmap_size=model.heatmap_size,
            config_digest=cfg.digest(),
            heatmaps_b64=heatmaps_b64)

    @app.post("/train-toy", response_model=TrainToyResponse)
    async def train_toy_route(req: TrainToyRequest) -> TrainToyResponse:
        cfg = _resolve_config(req.config, default=toy_config)
        result = train_toy(cfg, steps=req.steps, seed=req.seed,
                           n_samples=req.samples)
        return TrainToyResponse(**result.to_dict())

    @app.post("/selftest", response_model=SelftestResponse)
    async def selftest(req: SelftestRequest) -> SelftestResponse:
        report = run_selftest(corrupt_npt=req.corrupt_npt)
        return SelftestResponse(
            ok=report.ok,
            total_passed=report.total_passed,
            total_failed=report.total_failed,
            suites=[SuiteReport(**s.to_dict()) for s in report.suites])

    return app
