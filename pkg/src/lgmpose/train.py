"""Adam, procedural toy data, and the toy training loop.

The toy task exists to demonstrate end-to-end learnability of the full
network at desk scale, not to approximate real pose data: each keypoint
index renders as a Gaussian blob with a distinctive channel mix on a noise
background, and the network is asked to regress the usual Gaussian target
heatmaps with a masked MSE.  Everything is seeded; two runs with the same
seed produce bit-identical loss traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ops
from .errors import ShapeError, TrainingDivergedError
from .heatmap import KeypointSet, decode_heatmaps, gaussian_targets, pckh
from .model import Model, ModelConfig, build_model, init_weights, toy_config
from .tensor import GradTape, Tensor, backward, grad_for


@dataclass
class AdamState:
    """Bias-corrected Adam moments, kept in float64 regardless of the
    parameter dtype."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def create(cls, params, lr: float = 1e-3) -> "AdamState":
        st = cls(lr=lr)
        for name, p in params:
            st.m[name] = np.zeros(p.shape, dtype=np.float64)
            st.v[name] = np.zeros(p.shape, dtype=np.float64)
        return st


def adam_step(params, grads: dict, state: AdamState,
              lr: Optional[float] = None) -> None:
    """One in-place update.  ``params`` iterates (name, Tensor); ``grads``
    maps names to arrays (missing names count as zero gradient)."""
    state.step += 1
    t = state.step
    lr = state.lr if lr is None else lr
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params:
        m = state.m[name]
        v = state.v[name]
        g = grads.get(name)
        g = np.zeros(p.shape) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient for {name} has shape "
                             f"{g.shape}, parameter is {p.shape}")
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.assign_(p.data.astype(np.float64) - update)


def lr_factor(step: int, total: int) -> float:
    """x0.1 at 75% and again at 90% of the run."""
    if step >= math.floor(0.9 * total):
        return 0.01
    if step >= math.floor(0.75 * total):
        return 0.1
    return 1.0


# ---------------------------------------------------------------------------
# Procedural toy dataset


@dataclass
class ToySample:
    image: np.ndarray      # (3, H, W) float32 in [0, 1]
    keypoints: np.ndarray  # (K, 2) float, (x, y) in input pixels
    visible: np.ndarray    # (K,) bool


def _blob_palette(k: int) -> np.ndarray:
    """A distinct RGB mix per keypoint index (binary code, floor 0.3)."""
    a = np.zeros((k, 3))
    for i in range(k):
        for c in range(3):
            a[i, c] = 0.3 + 0.7 * ((i + 1) >> c & 1)
    return a


def make_toy_dataset(n_samples: int, input_size, keypoints: int,
                     seed: int) -> list[ToySample]:
    h, w = input_size
    rng = np.random.default_rng(seed)
    palette = _blob_palette(keypoints)
    sigma = max(2.0, h / 24.0)
    ys, xs = np.mgrid[0:h, 0:w]
    samples = []
    for _ in range(n_samples):
        kx = rng.uniform(w * 0.15, w * 0.85, size=keypoints)
        ky = rng.uniform(h * 0.15, h * 0.85, size=keypoints)
        img = 0.05 * rng.random((3, h, w))
        for i in range(keypoints):
            bump = np.exp(-((xs - kx[i]) ** 2 + (ys - ky[i]) ** 2)
                          / (2.0 * sigma ** 2))
            img += palette[i][:, None, None] * bump
        samples.append(ToySample(
            image=np.clip(img, 0.0, 1.0).astype(np.float32),
            keypoints=np.stack([kx, ky], axis=1),
            visible=np.ones(keypoints, bool)))
    return samples


# ---------------------------------------------------------------------------
# Toy training


@dataclass
class TrainToyResult:
    losses: list[float]
    pckh: Optional[float]
    frac_within_2cells: float
    steps: int
    seed: int
    config_digest: str
    heatmap_size: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "losses": self.losses,
            "initial_loss": self.losses[0] if self.losses else None,
            "final_loss": self.losses[-1] if self.losses else None,
            "pckh": self.pckh,
            "frac_within_2cells": self.frac_within_2cells,
            "steps": self.steps,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "heatmap_size": list(self.heatmap_size),
        }


def _masked_mse(pred: Tensor, target: Tensor, mask: Tensor, denom: float) -> Tensor:
    d = ops.sub(pred, target)
    return ops.scale(ops.tsum(ops.mul(ops.mul(d, d), mask)), 1.0 / denom)


def train_toy(cfg: Optional[ModelConfig] = None, steps: int = 200,
              seed: int = 0, n_samples: int = 8,
              target_sigma: float = 1.0) -> TrainToyResult:
    """Fit the model to a handful of procedural samples with full-batch Adam."""
    if steps < 1 or n_samples < 1:
        raise ShapeError("train_toy: steps and n_samples must be positive")
    cfg = toy_config() if cfg is None else cfg
    model = build_model(cfg)
    init_weights(model, seed)
    data = make_toy_dataset(n_samples, cfg.input_size, cfg.keypoints, seed + 1)
    heat_h, heat_w = model.heatmap_size
    stride = cfg.heatmap_stride

    mean = np.asarray(cfg.mean)[:, None, None]
    std = np.asarray(cfg.std)[:, None, None]
    x = Tensor(np.stack([(s.image - mean) / std for s in data]).astype(np.float32))
    gt_sets = [KeypointSet.of(s.keypoints / stride, s.visible) for s in data]
    target = Tensor(np.stack([
        gaussian_targets(ks, heat_h, heat_w, target_sigma).data
        for ks in gt_sets]))
    vis = np.stack([s.visible for s in data])
    mask = Tensor(np.broadcast_to(
        vis[:, :, None, None], target.shape).astype(np.float32).copy())
    denom = max(1, int(vis.sum())) * heat_h * heat_w

    params = list(model.named_params())
    state = AdamState.create(params, lr=1e-3)
    losses: list[float] = []
    for step in range(steps):
        with GradTape() as tape:
            pred = model.forward(x, training=True)
            loss = _masked_mse(pred, target, mask, denom)
        value = loss.item()
        if not math.isfinite(value):
            model.forward(x, training=True, check_finite=True)
            raise TrainingDivergedError(
                f"loss became non-finite at step {step} (activations finite: "
                f"the loss reduction itself overflowed)")
        losses.append(value)
        grads = backward(tape, loss)
        grad_map = {name: grad_for(grads, p) for name, p in params}
        adam_step(params, grad_map, state, lr=state.lr * lr_factor(step, steps))

    pred = model.forward(x)
    within = []
    pck_vals = []
    for i, ks in enumerate(gt_sets):
        dec = decode_heatmaps(Tensor(pred.data[i]))
        d = np.linalg.norm(dec.coords[ks.visible] - ks.coords[ks.visible], axis=1)
        within.extend(d <= 2.0)
        # toy reference scale: a "head" of a quarter of the heatmap height
        p = pckh(dec, ks, head_size=heat_h / 4.0)
        if p is not None:
            pck_vals.append(p)
    return TrainToyResult(
        losses=losses,
        pckh=float(np.mean(pck_vals)) if pck_vals else None,
        frac_within_2cells=float(np.mean(within)) if within else 0.0,
        steps=steps,
        seed=seed,
        config_digest=cfg.digest(),
        heatmap_size=(heat_h, heat_w))
