"""Wall-clock latency benchmarking of the inference path.

The timed region is the forward pass only; decoding is timed separately
because pose papers quote model FPS without post-processing.  The same
seeded random input is reused every iteration, and the raw per-iteration
times ship inside the report so every statistic can be recomputed by the
reader.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .heatmap import decode_heatmaps
from .model import (ModelConfig, build_model, cost_table, forward_eval,
                    init_weights)
from .tensor import Tensor


@dataclass
class BenchReport:
    config_digest: str
    input_size: tuple[int, int]
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

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["input_size"] = list(self.input_size)
        return d


def summarize_times(times_ms) -> tuple[float, float, float, float]:
    """(mean, p50, p95, fps) from raw samples; linear-interpolated percentiles."""
    arr = np.asarray(times_ms, dtype=np.float64)
    mean = float(arr.mean())
    p50 = float(np.percentile(arr, 50))
    p95 = float(np.percentile(arr, 95))
    return mean, p50, p95, 1000.0 / mean


def bench_run(cfg: ModelConfig, input_size=None, warmup: int = 2,
              iters: int = 5, threads: int = 1, seed: int = 0) -> BenchReport:
    if iters < 1:
        raise ShapeError(f"bench: iters must be >= 1, got {iters}")
    if warmup < 0:
        raise ShapeError(f"bench: warmup must be >= 0, got {warmup}")
    if input_size is not None:
        cfg = cfg.with_input_size(*input_size)
    model = build_model(cfg)
    init_weights(model, seed)
    h, w = cfg.input_size
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-1.0, 1.0, size=(3, h, w)).astype(np.float32))

    for _ in range(warmup):
        forward_eval(model, x, threads)
    times, decode_times = [], []
    for _ in range(iters):
        t0 = time.perf_counter()
        hm = forward_eval(model, x, threads)
        t1 = time.perf_counter()
        decode_heatmaps(hm)
        t2 = time.perf_counter()
        times.append((t1 - t0) * 1e3)
        decode_times.append((t2 - t1) * 1e3)

    mean, p50, p95, fps = summarize_times(times)
    entries = cost_table(cfg)
    return BenchReport(
        config_digest=cfg.digest(),
        input_size=cfg.input_size,
        warmup=warmup,
        iters=iters,
        threads=threads,
        seed=seed,
        times_ms=times,
        decode_times_ms=decode_times,
        mean_ms=mean,
        p50_ms=p50,
        p95_ms=p95,
        fps=fps,
        decode_mean_ms=float(np.mean(decode_times)),
        params=sum(e.params for e in entries),
        macs=sum(e.macs for e in entries))
