"""Request/response models for the HTTP service.

Sizes on the wire are ``[height, width]`` pairs, the same order the model
config file uses.  Binary payloads (weight blobs, images, heatmap dumps)
travel base64-encoded.  Unknown fields are rejected so a typo in a request
fails loudly instead of silently falling back to a default.
"""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

SizePair = tuple[int, int]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LayerCost(_Strict):
    name: str
    kind: str
    params: int
    macs: int


class CountRequest(_Strict):
    config: Optional[dict] = None          # model config object; default reference
    input_size: Optional[SizePair] = None  # [h, w] override


class CountResponse(_Strict):
    config_digest: str
    input_size: SizePair
    params: int
    macs: int
    flops: int
    heatmap_size: SizePair
    layers: list[LayerCost]


class BenchRequest(_Strict):
    config: Optional[dict] = None
    input_size: Optional[SizePair] = None
    warmup: int = Field(default=2, ge=0)
    iters: int = Field(default=5, ge=1)
    threads: int = Field(default=1, ge=1)
    seed: int = 0


class BenchResponse(_Strict):
    config_digest: str
    input_size: SizePair
    warmup: int
    iters: int
    threads: int
    seed: int
    times_ms: list[float]
    decode_times_ms: list[float]
    mean_ms: float
    p50_ms: float
    p95_ms: float
    fps: float
    decode_mean_ms: float
    params: int
    macs: int


class InferRequest(_Strict):
    image_b64: str                        # binary PPM (P6) or .npy, base64
    config: Optional[dict] = None
    weights_b64: Optional[str] = None     # weight blob; absent -> seeded init
    seed: int = 0
    threads: int = Field(default=1, ge=1)
    return_heatmaps: bool = False


class InferResponse(_Strict):
    keypoints: list[tuple[float, float, float]]  # (x, y, score), image pixels
    image_size: SizePair                         # as received
    input_size: SizePair                         # model resolution
    heatmap_size: SizePair
    config_digest: str
    heatmaps_b64: Optional[str] = None           # .npy bytes when requested


class TrainToyRequest(_Strict):
    config: Optional[dict] = None          # default: built-in toy config
    steps: int = Field(default=200, ge=1)
    seed: int = 0
    samples: int = Field(default=8, ge=1)


class TrainToyResponse(_Strict):
    losses: list[float]
    initial_loss: Optional[float]
    final_loss: Optional[float]
    pckh: Optional[float]
    frac_within_2cells: float
    steps: int
    seed: int
    config_digest: str
    heatmap_size: SizePair


class SelftestRequest(_Strict):
    corrupt_npt: bool = False   # negative-control hook; must make it fail


class SuiteReport(_Strict):
    name: str
    passed: int
    failed: int
    duration_ms: float
    failures: list[str]


class SelftestResponse(_Strict):
    ok: bool
    total_passed: int
    total_failed: int
    suites: list[SuiteReport]


class HealthResponse(_Strict):
    status: str
    version: str


class ErrorBody(_Strict):
    error: str    # config | weights | image | shape | training | internal
    detail: str
