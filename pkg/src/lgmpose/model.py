"""Model assembly from a declarative configuration.

A config names the stem width, a stage list, the fusion mode, and the
heatmap geometry; :func:`plan_layers` turns it into concrete per-layer
shapes (validating stride bookkeeping and skip pairings), and both the
executable model and the cost accounting are derived from that one plan,
so the counter can never drift from what actually runs.

Config JSON schema (unknown keys anywhere are rejected)::

    {
      "input_size": [256, 192],          // [height, width]
      "keypoints": 17,
      "stem_channels": 16,
      "heatmap_stride": 4,               // optional, default 4
      "fusion": {"mode": "sfusion",      // none|conv3x3|dw_separable|sfusion
                 "shuffle_groups": 2, "conv_groups": 2},
      "mean": [0.5, 0.5, 0.5],           // optional input normalization
      "std":  [0.5, 0.5, 0.5],
      "stages": [
        {"kind": "mnv2", "channels": 16, "stride": 1, "expansion": 1},
        {"kind": "mobilevim", "inner_dim": 64, "patch": [2, 2], "ratio": 4},
        {"kind": "deconv", "channels": 64},
        {"kind": "sfusion", "channels": 64, "skip": 6},
        {"kind": "head"}                 // exactly once, last
      ]
    }

``skip`` is a 0-based index into ``stages`` whose output the fusion stage
consumes; the planner checks it resolves to an earlier stage of identical
spatial size and reports both stage names when it does not.

The stem is a fixed 3x3 stride-2 conv (3 -> stem_channels) with batch norm
and relu6.  Deconv stages are 4x4 stride-2 pad-1 with bias.  The head is a
1x1 conv with bias emitting one channel per keypoint.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np

from . import ops
from .blocks import (BatchNormParams, FusionMode, InvertedResidualParams,
                     MobileVimParams, SFusionParams, _fill_uniform,
                     inverted_residual_forward, mobilevim_forward,
                     sfusion_forward)
from .errors import ConfigError, ShapeError, TrainingDivergedError
from .npt import pad_for_patches
from .tensor import Tensor

STAGE_KINDS = ("mnv2", "mobilevim", "deconv", "sfusion", "head")


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class StageSpec:
    kind: str
    channels: Optional[int] = None
    stride: int = 1
    expansion: int = 6
    inner_dim: Optional[int] = None
    patch: tuple[int, int] = (2, 2)
    ratio: int = 2
    skip: Optional[int] = None


@dataclass(frozen=True)
class ModelConfig:
    input_size: tuple[int, int]
    keypoints: int
    stem_channels: int
    stages: tuple[StageSpec, ...]
    fusion: FusionMode = field(default_factory=FusionMode)
    heatmap_stride: int = 4
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: tuple[float, float, float] = (0.5, 0.5, 0.5)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return _parse_config(d)

    def to_dict(self) -> dict:
        stages = []
        for s in self.stages:
            if s.kind == "mnv2":
                stages.append({"kind": s.kind, "channels": s.channels,
                               "stride": s.stride, "expansion": s.expansion})
            elif s.kind == "mobilevim":
                stages.append({"kind": s.kind, "inner_dim": s.inner_dim,
                               "patch": list(s.patch), "ratio": s.ratio})
            elif s.kind == "deconv":
                stages.append({"kind": s.kind, "channels": s.channels})
            elif s.kind == "sfusion":
                stages.append({"kind": s.kind, "channels": s.channels,
                               "skip": s.skip})
            else:
                stages.append({"kind": s.kind})
        return {
            "input_size": list(self.input_size),
            "keypoints": self.keypoints,
            "stem_channels": self.stem_channels,
            "heatmap_stride": self.heatmap_stride,
            "fusion": {"mode": self.fusion.mode,
                       "shuffle_groups": self.fusion.shuffle_groups,
                       "conv_groups": self.fusion.conv_groups},
            "mean": list(self.mean),
            "std": list(self.std),
            "stages": stages,
        }

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def with_input_size(self, h: int, w: int) -> "ModelConfig":
        return replace(self, input_size=(int(h), int(w)))


def _expect_int(d: dict, key: str, ctx: str, default=None, minimum=1):
    if key not in d:
        if default is None:
            raise ConfigError(f"{ctx}: missing required key {key!r}")
        return default
    v = d[key]
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        raise ConfigError(f"{ctx}: {key} must be an integer >= {minimum}, got {v!r}")
    return v


def _expect_pair(d: dict, key: str, ctx: str, default=None):
    if key not in d:
        if default is None:
            raise ConfigError(f"{ctx}: missing required key {key!r}")
        return default
    v = d[key]
    if (not isinstance(v, (list, tuple)) or len(v) != 2
            or not all(isinstance(x, int) and x >= 1 for x in v)):
        raise ConfigError(f"{ctx}: {key} must be a pair of positive integers, got {v!r}")
    return int(v[0]), int(v[1])


def _expect_floats3(d: dict, key: str, ctx: str, default):
    if key not in d:
        return default
    v = d[key]
    if (not isinstance(v, (list, tuple)) or len(v) != 3
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)):
        raise ConfigError(f"{ctx}: {key} must be three numbers, got {v!r}")
    return tuple(float(x) for x in v)


def _reject_unknown(d: dict, allowed: set, ctx: str) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"{ctx}: unknown keys {unknown}")


_STAGE_KEYS = {
    "mnv2": {"kind", "channels", "stride", "expansion"},
    "mobilevim": {"kind", "inner_dim", "patch", "ratio"},
    "deconv": {"kind", "channels"},
    "sfusion": {"kind", "channels", "skip"},
    "head": {"kind"},
}


def _parse_stage(d: dict, i: int) -> StageSpec:
    ctx = f"stages[{i}]"
    if not isinstance(d, dict):
        raise ConfigError(f"{ctx}: stage must be an object, got {type(d).__name__}")
    kind = d.get("kind")
    if kind not in STAGE_KINDS:
        raise ConfigError(f"{ctx}: kind must be one of {STAGE_KINDS}, got {kind!r}")
    _reject_unknown(d, _STAGE_KEYS[kind], ctx)
    if kind == "mnv2":
        stride = _expect_int(d, "stride", ctx, default=1)
        if stride not in (1, 2):
            raise ConfigError(f"{ctx}: stride must be 1 or 2, got {stride}")
        return StageSpec(kind=kind,
                         channels=_expect_int(d, "channels", ctx),
                         stride=stride,
                         expansion=_expect_int(d, "expansion", ctx, default=6))
    if kind == "mobilevim":
        return StageSpec(kind=kind,
                         inner_dim=_expect_int(d, "inner_dim", ctx),
                         patch=_expect_pair(d, "patch", ctx, default=(2, 2)),
                         ratio=_expect_int(d, "ratio", ctx, default=2))
    if kind == "deconv":
        return StageSpec(kind=kind, channels=_expect_int(d, "channels", ctx))
    if kind == "sfusion":
        return StageSpec(kind=kind,
                         channels=_expect_int(d, "channels", ctx),
                         skip=_expect_int(d, "skip", ctx, minimum=0))
    return StageSpec(kind="head")


def _parse_config(d: dict) -> ModelConfig:
    if not isinstance(d, dict):
        raise ConfigError(f"config: expected an object, got {type(d).__name__}")
    _reject_unknown(d, {"input_size", "keypoints", "stem_channels",
                        "heatmap_stride", "fusion", "mean", "std", "stages"},
                    "config")
    fusion_d = d.get("fusion", {})
    if not isinstance(fusion_d, dict):
        raise ConfigError("config: fusion must be an object")
    _reject_unknown(fusion_d, {"mode", "shuffle_groups", "conv_groups"}, "config.fusion")
    mode = fusion_d.get("mode", "sfusion")
    try:
        fusion = FusionMode(mode=mode,
                            shuffle_groups=_expect_int(fusion_d, "shuffle_groups",
                                                       "config.fusion", default=2),
                            conv_groups=_expect_int(fusion_d, "conv_groups",
                                                    "config.fusion", default=2))
    except ShapeError as e:
        raise ConfigError(f"config.fusion: {e}") from e
    stages_d = d.get("stages")
    if not isinstance(stages_d, list) or not stages_d:
        raise ConfigError("config: stages must be a non-empty list")
    return ModelConfig(
        input_size=_expect_pair(d, "input_size", "config"),
        keypoints=_expect_int(d, "keypoints", "config"),
        stem_channels=_expect_int(d, "stem_channels", "config"),
        heatmap_stride=_expect_int(d, "heatmap_stride", "config", default=4),
        fusion=fusion,
        mean=_expect_floats3(d, "mean", "config", (0.5, 0.5, 0.5)),
        std=_expect_floats3(d, "std", "config", (0.5, 0.5, 0.5)),
        stages=tuple(_parse_stage(s, i) for i, s in enumerate(stages_d)),
    )


def load_config(path: str) -> ModelConfig:
    try:
        with open(path, "rb") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path}: invalid JSON ({e})") from e
    return ModelConfig.from_dict(d)


def reference_config(input_size=(256, 192), keypoints: int = 17,
                     fusion: Optional[FusionMode] = None) -> ModelConfig:
    """The default network: stem to 1/32 with global-mixing stages at 1/8,
    1/16 and 1/32, three deconv+fusion stages back to 1/4, 1x1 head."""
    mv = dict(kind="mobilevim", patch=(2, 2), ratio=4)
    stages = (
        StageSpec(kind="mnv2", channels=16, stride=1, expansion=1),
        StageSpec(kind="mnv2", channels=24, stride=2),
        StageSpec(kind="mnv2", channels=24, stride=1),
        StageSpec(kind="mnv2", channels=48, stride=2),
        StageSpec(inner_dim=64, **mv),
        StageSpec(kind="mnv2", channels=64, stride=2),
        StageSpec(inner_dim=80, **mv),
        StageSpec(kind="mnv2", channels=80, stride=2),
        StageSpec(inner_dim=96, **mv),
        StageSpec(kind="deconv", channels=64),
        StageSpec(kind="sfusion", channels=64, skip=6),
        StageSpec(kind="deconv", channels=48),
        StageSpec(kind="sfusion", channels=48, skip=4),
        StageSpec(kind="deconv", channels=32),
        StageSpec(kind="sfusion", channels=32, skip=2),
        StageSpec(kind="head"),
    )
    return ModelConfig(input_size=tuple(input_size), keypoints=keypoints,
                       stem_channels=16, stages=stages,
                       fusion=fusion or FusionMode())


def toy_config(input_size=(64, 64), keypoints: int = 4,
               fusion: Optional[FusionMode] = None) -> ModelConfig:
    """A narrow variant of the reference topology, small enough to train
    for a few hundred steps on synthetic data in well under a minute."""
    mv = dict(kind="mobilevim", patch=(2, 2), ratio=2)
    stages = (
        StageSpec(kind="mnv2", channels=8, stride=1, expansion=1),
        StageSpec(kind="mnv2", channels=12, stride=2),
        StageSpec(kind="mnv2", channels=16, stride=2),
        StageSpec(inner_dim=16, **mv),
        StageSpec(kind="mnv2", channels=24, stride=2),
        StageSpec(inner_dim=24, **mv),
        StageSpec(kind="mnv2", channels=32, stride=2),
        StageSpec(inner_dim=32, **mv),
        StageSpec(kind="deconv", channels=24),
        StageSpec(kind="sfusion", channels=24, skip=5),
        StageSpec(kind="deconv", channels=16),
        StageSpec(kind="sfusion", channels=16, skip=3),
        StageSpec(kind="deconv", channels=12),
        StageSpec(kind="sfusion", channels=12, skip=1),
        StageSpec(kind="head"),
    )
    return ModelConfig(input_size=tuple(input_size), keypoints=keypoints,
                       stem_channels=8, stages=stages,
                       fusion=fusion or FusionMode())


# ---------------------------------------------------------------------------
# Layer planning: one shape walk shared by the builder and the counter


@dataclass(frozen=True)
class LayerPlan:
    name: str
    kind: str
    c_in: int
    c_out: int
    h_in: int
    w_in: int
    h_out: int
    w_out: int
    spec: Optional[StageSpec] = None
    skip_layer: Optional[int] = None  # index into the plan list
    c_skip: Optional[int] = None      # channels delivered by the skip source


def plan_layers(cfg: ModelConfig, input_size=None) -> list[LayerPlan]:
    h_in, w_in = input_size if input_size is not None else cfg.input_size
    if h_in < cfg.heatmap_stride or w_in < cfg.heatmap_stride:
        raise ConfigError(f"input size {h_in}x{w_in} is smaller than the "
                          f"heatmap stride {cfg.heatmap_stride}")
    plans: list[LayerPlan] = []
    c, h, w = cfg.stem_channels, (h_in + 1) // 2, (w_in + 1) // 2
    plans.append(LayerPlan("stem", "stem", 3, c, h_in, w_in, h, w))
    for i, s in enumerate(cfg.stages):
        name = f"stages[{i}].{s.kind}"
        if s.kind == "mnv2":
            h2 = h if s.stride == 1 else (h + 1) // 2
            w2 = w if s.stride == 1 else (w + 1) // 2
            plans.append(LayerPlan(name, s.kind, c, s.channels, h, w, h2, w2, s))
            c, h, w = s.channels, h2, w2
        elif s.kind == "mobilevim":
            plans.append(LayerPlan(name, s.kind, c, c, h, w, h, w, s))
        elif s.kind == "deconv":
            plans.append(LayerPlan(name, s.kind, c, s.channels, h, w, 2 * h, 2 * w, s))
            c, h, w = s.channels, 2 * h, 2 * w
        elif s.kind == "sfusion":
            if s.skip is None or not (0 <= s.skip < i):
                raise ConfigError(f"{name}: skip must name an earlier stage, "
                                  f"got {s.skip!r}")
            src = plans[s.skip + 1]
            if (src.h_out, src.w_out) != (h, w):
                raise ConfigError(
                    f"{name} at {h}x{w} cannot fuse with {src.name} at "
                    f"{src.h_out}x{src.w_out}: spatial dims must match")
            if cfg.fusion.mode == "none" and s.channels != c:
                raise ConfigError(f"{name}: fusion mode none passes {c} "
                                  f"channels through, config says {s.channels}")
            plans.append(LayerPlan(name, s.kind, c, s.channels, h, w, h, w, s,
                                   skip_layer=s.skip + 1, c_skip=src.c_out))
            c = s.channels
        else:  # head
            if i != len(cfg.stages) - 1:
                raise ConfigError(f"{name}: head must be the final stage")
            want = (h_in // cfg.heatmap_stride, w_in // cfg.heatmap_stride)
            if (h, w) != want:
                raise ConfigError(
                    f"{name}: feature map is {h}x{w} but heatmaps must be "
                    f"input/{cfg.heatmap_stride} = {want[0]}x{want[1]}")
            plans.append(LayerPlan(name, s.kind, c, cfg.keypoints, h, w, h, w, s))
            c = cfg.keypoints
    if not cfg.stages or cfg.stages[-1].kind != "head":
        raise ConfigError("config: stage list must end with a head stage")
    return plans


# ---------------------------------------------------------------------------
# Cost accounting


@dataclass(frozen=True)
class CostEntry:
    name: str
    kind: str
    params: int
    macs: int


def _mobilevim_cost(p: LayerPlan, prefix: str) -> list[CostEntry]:
    c, d = p.c_in, p.spec.inner_dim
    r = p.spec.ratio
    ph, pw = p.spec.patch
    pads = pad_for_patches(p.h_in, p.w_in, ph, pw)
    hh = p.h_in + pads[0] + pads[1]
    ww = p.w_in + pads[2] + pads[3]
    pp = ph * pw
    nn = (hh // ph) * (ww // pw)
    px = p.h_in * p.w_in
    mlp = lambda L: 2 * L + (r * L * L + r * L) + (L * r * L + L)
    return [
        CostEntry(f"{prefix}.local", "conv3x3", 9 * c * c + c, 9 * c * c * px),
        CostEntry(f"{prefix}.proj", "conv1x1", c * d + d, c * d * px),
        CostEntry(f"{prefix}.larm.inter", "mlp", mlp(nn), 2 * r * nn * nn * pp * d),
        CostEntry(f"{prefix}.larm.intra", "mlp", mlp(pp), 2 * r * pp * pp * nn * d),
        CostEntry(f"{prefix}.back", "conv1x1", d * c + c, d * c * px),
        CostEntry(f"{prefix}.fuse", "conv3x3", 9 * 2 * c * c + c, 9 * 2 * c * c * px),
    ]


def _cost_for(p: LayerPlan, cfg: ModelConfig) -> list[CostEntry]:
    out_px = p.h_out * p.w_out
    in_px = p.h_in * p.w_in
    if p.kind == "stem":
        return [CostEntry("stem.conv", "conv3x3", 27 * p.c_out, 27 * p.c_out * out_px),
                CostEntry("stem.bn", "bn", 2 * p.c_out, 0)]
    if p.kind == "mnv2":
        t = p.spec.expansion
        e = p.c_in * t
        entries = []
        if t > 1:
            entries.append(CostEntry(f"{p.name}.expand", "conv1x1",
                                     p.c_in * e, p.c_in * e * in_px))
            entries.append(CostEntry(f"{p.name}.bn1", "bn", 2 * e, 0))
        entries.append(CostEntry(f"{p.name}.dw", "conv3x3dw", 9 * e, 9 * e * out_px))
        entries.append(CostEntry(f"{p.name}.bn2", "bn", 2 * e, 0))
        entries.append(CostEntry(f"{p.name}.proj", "conv1x1",
                                 e * p.c_out, e * p.c_out * out_px))
        entries.append(CostEntry(f"{p.name}.bn3", "bn", 2 * p.c_out, 0))
        return entries
    if p.kind == "mobilevim":
        return _mobilevim_cost(p, p.name)
    if p.kind == "deconv":
        return [CostEntry(p.name, "deconv4x4",
                          p.c_in * p.c_out * 16 + p.c_out,
                          p.c_in * p.c_out * 16 * in_px)]
    if p.kind == "sfusion":
        cat = p.c_in + p.c_skip
        k = cfg.fusion.conv_groups
        if cfg.fusion.mode == "none":
            return [CostEntry(p.name, "fuse_none", 0, 0)]
        if cfg.fusion.mode == "conv3x3":
            return [CostEntry(p.name, "fuse_conv3x3",
                              9 * cat * p.c_out + p.c_out,
                              9 * cat * p.c_out * out_px)]
        if cfg.fusion.mode == "dw_separable":
            return [CostEntry(f"{p.name}.dw", "conv3x3dw", 9 * cat, 9 * cat * out_px),
                    CostEntry(f"{p.name}.pw", "conv1x1",
                              (cat // k) * p.c_out + p.c_out,
                              (cat // k) * p.c_out * out_px)]
        return [CostEntry(p.name, "fuse_sfusion",
                          9 * (cat // k) * p.c_out + p.c_out,
                          9 * (cat // k) * p.c_out * out_px)]
    # head
    return [CostEntry(p.name, "conv1x1",
                      p.c_in * p.c_out + p.c_out, p.c_in * p.c_out * out_px)]


def cost_table(cfg: ModelConfig, input_size=None) -> list[CostEntry]:
    """Per-sublayer closed-form parameter and MAC counts for the topology
    instantiated at ``input_size`` (default: the configured size)."""
    entries: list[CostEntry] = []
    for p in plan_layers(cfg, input_size):
        entries.extend(_cost_for(p, cfg))
    return entries


# ---------------------------------------------------------------------------
# Runtime layers


class _StemLayer:
    def __init__(self, plan: LayerPlan, dtype):
        self.plan = plan
        self.w = Tensor(np.zeros((plan.c_out, 3, 3, 3), dtype=dtype), requires_grad=True)
        self.bn = BatchNormParams.create(plan.c_out, dtype)

    def forward(self, x, training):
        h = ops.conv2d(x, self.w, stride=2, padding=1)
        return ops.relu6(self.bn.apply(h, training))

    def init(self, rng):
        _fill_uniform(self.w, rng, 27)
        self.bn.init(rng)

    def named_params(self):
        yield "stem.w", self.w
        yield from self.bn.named("stem.bn")

    def named_buffers(self):
        yield from self.bn.buffers("stem.bn")


class _Mnv2Layer:
    def __init__(self, plan: LayerPlan, dtype):
        self.plan = plan
        self.p = InvertedResidualParams.create(
            plan.c_in, plan.c_out, plan.spec.stride, plan.spec.expansion, dtype)

    def forward(self, x, training):
        return inverted_residual_forward(x, self.p, training)

    def init(self, rng):
        self.p.init(rng)

    def named_params(self):
        yield from self.p.named(self.plan.name)

    def named_buffers(self):
        yield from self.p.buffers(self.plan.name)


class _MobileVimLayer:
    def __init__(self, plan: LayerPlan, dtype):
        self.plan = plan
        ph, pw = plan.spec.patch
        self.p = MobileVimParams.create(plan.c_in, plan.spec.inner_dim,
                                        plan.h_in, plan.w_in, ph, pw,
                                        plan.spec.ratio, dtype, allow_pad=True)

    def forward(self, x, training):
        return mobilevim_forward(x, self.p)

    def init(self, rng):
        self.p.init(rng)

    def named_params(self):
        yield from self.p.named(self.plan.name)

    def named_buffers(self):
        return iter(())


class _DeconvLayer:
    def __init__(self, plan: LayerPlan, dtype):
        self.plan = plan
        self.w = Tensor(np.zeros((plan.c_in, plan.c_out, 4, 4), dtype=dtype), requires_grad=True)
        self.b = Tensor(np.zeros(plan.c_out, dtype=dtype), requires_grad=True)

    def forward(self, x, training):
        return ops.conv_transpose2d(x, self.w, self.b, stride=2, padding=1)

    def init(self, rng):
        # each output pixel accumulates (k/stride)^2 taps from every channel
        _fill_uniform(self.w, rng, 4 * self.plan.c_in)
        _fill_uniform(self.b, rng, 4 * self.plan.c_in)

    def named_params(self):
        yield f"{self.plan.name}.w", self.w
        yield f"{self.plan.name}.b", self.b

    def named_buffers(self):
        return iter(())


class _SFusionLayer:
    def __init__(self, plan: LayerPlan, cfg: ModelConfig, dtype):
        self.plan = plan
        try:
            self.p = SFusionParams.create(cfg.fusion, plan.c_in, plan.c_skip,
                                          plan.c_out, dtype)
        except ShapeError as e:
            raise ConfigError(f"{plan.name}: {e}") from e

    def forward(self, x, skip, training):
        return sfusion_forward(x, skip, self.p)

    def init(self, rng):
        self.p.init(rng)

    def named_params(self):
        yield from self.p.named(self.plan.name)

    def named_buffers(self):
        return iter(())


class _HeadLayer:
    def __init__(self, plan: LayerPlan, dtype):
        self.plan = plan
        self.w = Tensor(np.zeros((plan.c_out, plan.c_in, 1, 1), dtype=dtype), requires_grad=True)
        self.b = Tensor(np.zeros(plan.c_out, dtype=dtype), requires_grad=True)

    def forward(self, x, training):
        return ops.conv2d(x, self.w, self.b)

    def init(self, rng):
        _fill_uniform(self.w, rng, self.plan.c_in)
        _fill_uniform(self.b, rng, self.plan.c_in)

    def named_params(self):
        yield f"{self.plan.name}.w", self.w
        yield f"{self.plan.name}.b", self.b

    def named_buffers(self):
        return iter(())


_LAYER_TYPES = {
    "stem": _StemLayer,
    "mnv2": _Mnv2Layer,
    "mobilevim": _MobileVimLayer,
    "deconv": _DeconvLayer,
    "head": _HeadLayer,
}


class Model:
    """An executable stack of planned layers; immutable shape contract."""

    def __init__(self, cfg: ModelConfig, plans: list[LayerPlan], layers: list, dtype):
        self.cfg = cfg
        self.plans = plans
        self.layers = layers
        self.dtype = np.dtype(dtype)

    @property
    def heatmap_size(self) -> tuple[int, int]:
        return self.plans[-1].h_out, self.plans[-1].w_out

    def forward(self, x: Tensor, training: bool = False,
                check_finite: bool = False) -> Tensor:
        squeeze = x.ndim == 3
        h = ops.reshape(x, (1,) + x.shape) if squeeze else x
        want = (3, self.cfg.input_size[0], self.cfg.input_size[1])
        if h.ndim != 4 or h.shape[1:] != want:
            raise ShapeError(f"forward: model expects input {want}, got {x.shape}")
        outputs = []
        for plan, layer in zip(self.plans, self.layers):
            if plan.kind == "sfusion":
                h = layer.forward(h, outputs[plan.skip_layer], training)
            else:
                h = layer.forward(h, training)
            if check_finite and not np.isfinite(h.data).all():
                raise TrainingDivergedError(
                    f"non-finite activation after {plan.name}")
            outputs.append(h)
        return ops.reshape(h, h.shape[1:]) if squeeze else h

    def named_params(self) -> Iterator[tuple[str, Tensor]]:
        for layer in self.layers:
            yield from layer.named_params()

    def named_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        for layer in self.layers:
            yield from layer.named_buffers()


def build_model(cfg: ModelConfig, dtype=np.float32) -> Model:
    plans = plan_layers(cfg)
    layers = []
    for p in plans:
        if p.kind == "sfusion":
            layers.append(_SFusionLayer(p, cfg, dtype))
        else:
            layers.append(_LAYER_TYPES[p.kind](p, dtype))
    return Model(cfg, plans, layers, dtype)


def init_weights(model: Model, seed: int) -> Model:
    """Deterministic fan-in-scaled uniform init; one generator, fixed walk order."""
    rng = np.random.default_rng(seed)
    for layer in model.layers:
        layer.init(rng)
    return model


def count_params(model: Model) -> int:
    """Scalar parameter count (norm affine included, running stats excluded)."""
    return sum(t.size for _, t in model.named_params())


def count_flops(model: Model, input_size=None) -> int:
    """Total multiply-accumulates for one sample at ``input_size`` (default
    the built size).  1 MAC is counted as 1 FLOP; see cost_table for the
    per-layer breakdown."""
    return sum(e.macs for e in cost_table(model.cfg, input_size))


def forward_eval(model: Model, x: Tensor, threads: int = 1) -> Tensor:
    """Inference-path forward.  Batched inputs are processed sample by
    sample in index order (optionally on a thread pool), so results are
    identical for every thread count."""
    if x.ndim == 3 or x.shape[0] == 1:
        return model.forward(x)
    samples = [Tensor(x.data[i]) for i in range(x.shape[0])]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(model.forward, samples))
    else:
        outs = [model.forward(s) for s in samples]
    return Tensor(np.stack([o.data for o in outs]))
