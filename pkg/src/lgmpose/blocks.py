"""Architecture blocks: residual MLP mixing, the attention-free global
module (LARM) and its MobileViM wrapper, the MobileNetV2 inverted residual,
channel shuffle, and the selectable fusion-stage family.

Blocks are pure functions of (input, parameter record).  Parameter records
are small dataclasses of named tensors; ``create`` builds them zeroed,
``init`` fills them in place from a numpy Generator (fan-in-scaled uniform
for weights, 1/0 for norm affines), and ``named`` walks them in a stable
order for counting and serialization.  Spatial inputs may be (C, H, W) or
batched (B, C, H, W); single samples are promoted internally.

Parameter closed forms (used by the model counter and the cost tests):

* mlp_block on mix axis L, ratio r:  2L (norm) + (rL*L + rL) + (L*rL + L)
* larm: one mlp_block over N plus one over P
* mobilevim on C channels, inner width d:
  9C^2 + C  (local 3x3) + Cd + d (proj) + larm + dC + C (back)
  + 9*2C*C + C (fusion 3x3)
* inverted residual C_in -> C_out, factor t, E = t*C_in:
  C_in*E + 2E (expand+bn, absent when t == 1) + 9E + 2E (depthwise+bn)
  + E*C_out + 2C_out (project+bn)
* fusion on c_cat = C_up + C_skip inputs, c_out outputs:
  none 0; conv3x3 9*c_cat*c_out + c_out; dw_separable 9*c_cat +
  (c_cat/k)*c_out + c_out; sfusion 9*(c_cat/k)*c_out + c_out
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from . import ops
from .errors import ShapeError
from .npt import PatchDims, npt_op1, npt_op2, npt_op3, pad_for_patches
from .tensor import Tensor

FUSION_MODES = ("none", "conv3x3", "dw_separable", "sfusion")


def _zeros(*shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _fill_uniform(t: Tensor, rng: np.random.Generator, fan_in: int) -> None:
    bound = 1.0 / math.sqrt(fan_in)
    t.assign_(rng.uniform(-bound, bound, size=t.shape))


def _as_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return ops.reshape(x, (1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected a 3-d or 4-d spatial tensor, got {x.shape}")


def _unbatch(y: Tensor, squeezed: bool) -> Tensor:
    return ops.reshape(y, y.shape[1:]) if squeezed else y


# ---------------------------------------------------------------------------
# Residual MLP block over the last axis


@dataclass
class MlpBlockParams:
    """norm affine + two linear layers; mixes the last axis of extent L."""

    gamma: Tensor
    beta: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def create(cls, mix_dim: int, ratio: int = 2, dtype=np.float32) -> "MlpBlockParams":
        if ratio < 1:
            raise ShapeError(f"mlp_block: expansion ratio must be >= 1, got {ratio}")
        hidden = ratio * mix_dim
        return cls(gamma=_zeros(mix_dim, dtype=dtype),
                   beta=_zeros(mix_dim, dtype=dtype),
                   w1=_zeros(hidden, mix_dim, dtype=dtype),
                   b1=_zeros(hidden, dtype=dtype),
                   w2=_zeros(mix_dim, hidden, dtype=dtype),
                   b2=_zeros(mix_dim, dtype=dtype))

    @property
    def mix_dim(self) -> int:
        return self.gamma.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def init(self, rng: np.random.Generator) -> None:
        self.gamma.assign_(np.ones(self.mix_dim))
        self.beta.assign_(np.zeros(self.mix_dim))
        _fill_uniform(self.w1, rng, self.mix_dim)
        _fill_uniform(self.b1, rng, self.mix_dim)
        _fill_uniform(self.w2, rng, self.hidden)
        _fill_uniform(self.b2, rng, self.hidden)

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for n in ("gamma", "beta", "w1", "b1", "w2", "b2"):
            yield f"{prefix}.{n}", getattr(self, n)

    def param_count(self) -> int:
        L, h = self.mix_dim, self.hidden
        return 2 * L + (h * L + h) + (L * h + L)


def mlp_block(x: Tensor, p: MlpBlockParams, eps: float = 1e-5) -> Tensor:
    """x + Linear2(GELU(Linear1(LayerNorm(x)))), all along the last axis."""
    if x.shape[-1] != p.mix_dim:
        raise ShapeError(f"mlp_block: last axis {x.shape[-1]} does not match "
                         f"parameters built for {p.mix_dim}")
    h = ops.layer_norm(x, p.gamma, p.beta, eps)
    h = ops.linear(h, p.w1, p.b1)
    h = ops.gelu(h)
    h = ops.linear(h, p.w2, p.b2)
    return ops.add(x, h)


# ---------------------------------------------------------------------------
# LARM: inter-patch then intra-patch mixing between layout transposes


@dataclass
class LarmParams:
    """Two residual MLP blocks bracketed by the patch-layout permutations.

    ``dims`` describes the (possibly padded) map the permutations act on;
    ``pads`` is applied before and removed after when the raw feature map
    does not divide into whole patches.
    """

    inter_patch: MlpBlockParams
    intra_patch: MlpBlockParams
    dims: PatchDims
    pads: tuple[int, int, int, int] = (0, 0, 0, 0)

    @classmethod
    def create(cls, channels: int, height: int, width: int,
               patch_h: int = 2, patch_w: int = 2, ratio: int = 2,
               dtype=np.float32, allow_pad: bool = False) -> "LarmParams":
        pads = pad_for_patches(height, width, patch_h, patch_w)
        if any(pads) and not allow_pad:
            raise ShapeError(
                f"larm: {height}x{width} map is not divisible by patch "
                f"{patch_h}x{patch_w} and padding is not enabled")
        dims = PatchDims(channels, height + pads[0] + pads[1],
                         width + pads[2] + pads[3], patch_h, patch_w)
        return cls(inter_patch=MlpBlockParams.create(dims.num_patches, ratio, dtype),
                   intra_patch=MlpBlockParams.create(dims.pixels_per_patch, ratio, dtype),
                   dims=dims, pads=pads)

    def init(self, rng: np.random.Generator) -> None:
        self.inter_patch.init(rng)
        self.intra_patch.init(rng)

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.inter_patch.named(f"{prefix}.inter")
        yield from self.intra_patch.named(f"{prefix}.intra")

    def param_count(self) -> int:
        return self.inter_patch.param_count() + self.intra_patch.param_count()


def larm_forward(x: Tensor, p: LarmParams) -> Tensor:
    """Mix across patches (N axis), then within patches (P axis)."""
    h, squeezed = _as_batched(x)
    if any(p.pads):
        h = ops.pad2d(h, p.pads)
    u = npt_op1(h, p.dims)            # (B, P, d, N): last axis walks patches
    u = mlp_block(u, p.inter_patch)
    v = npt_op2(u, p.dims)            # (B, N, d, P): last axis walks pixels
    v = mlp_block(v, p.intra_patch)
    h = npt_op3(v, p.dims)
    if any(p.pads):
        h = ops.crop2d(h, p.pads)
    return _unbatch(h, squeezed)


# ---------------------------------------------------------------------------
# MobileViM: local conv, project to inner width, global mixing, fuse back


@dataclass
class MobileVimParams:
    local_w: Tensor
    local_b: Tensor
    proj_w: Tensor
    proj_b: Tensor
    larm: LarmParams
    back_w: Tensor
    back_b: Tensor
    fuse_w: Tensor
    fuse_b: Tensor

    @classmethod
    def create(cls, channels: int, inner_dim: int, height: int, width: int,
               patch_h: int = 2, patch_w: int = 2, ratio: int = 2,
               dtype=np.float32, allow_pad: bool = False) -> "MobileVimParams":
        c, d = channels, inner_dim
        return cls(
            local_w=_zeros(c, c, 3, 3, dtype=dtype),
            local_b=_zeros(c, dtype=dtype),
            proj_w=_zeros(d, c, 1, 1, dtype=dtype),
            proj_b=_zeros(d, dtype=dtype),
            larm=LarmParams.create(d, height, width, patch_h, patch_w,
                                   ratio, dtype, allow_pad),
            back_w=_zeros(c, d, 1, 1, dtype=dtype),
            back_b=_zeros(c, dtype=dtype),
            fuse_w=_zeros(c, 2 * c, 3, 3, dtype=dtype),
            fuse_b=_zeros(c, dtype=dtype))

    @property
    def channels(self) -> int:
        return self.local_w.shape[0]

    def init(self, rng: np.random.Generator) -> None:
        c, d = self.channels, self.proj_w.shape[0]
        _fill_uniform(self.local_w, rng, c * 9)
        _fill_uniform(self.local_b, rng, c * 9)
        _fill_uniform(self.proj_w, rng, c)
        _fill_uniform(self.proj_b, rng, c)
        self.larm.init(rng)
        _fill_uniform(self.back_w, rng, d)
        _fill_uniform(self.back_b, rng, d)
        _fill_uniform(self.fuse_w, rng, 2 * c * 9)
        _fill_uniform(self.fuse_b, rng, 2 * c * 9)

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for n in ("local_w", "local_b", "proj_w", "proj_b"):
            yield f"{prefix}.{n}", getattr(self, n)
        yield from self.larm.named(f"{prefix}.larm")
        for n in ("back_w", "back_b", "fuse_w", "fuse_b"):
            yield f"{prefix}.{n}", getattr(self, n)

    def param_count(self) -> int:
        c, d = self.channels, self.proj_w.shape[0]
        return (9 * c * c + c) + (c * d + d) + self.larm.param_count() \
            + (d * c + c) + (9 * 2 * c * c + c)


def mobilevim_forward(x: Tensor, p: MobileVimParams) -> Tensor:
    """Local 3x3 conv, 1x1 down to the inner width, global mixing, 1x1 back
    up, then concat with the input (input channels first) and fuse 2C->C."""
    h, squeezed = _as_batched(x)
    if h.shape[1] != p.channels:
        raise ShapeError(f"mobilevim: input has {h.shape[1]} channels, "
                         f"parameters built for {p.channels}")
    g = ops.conv2d(h, p.local_w, p.local_b, padding=1)
    g = ops.conv2d(g, p.proj_w, p.proj_b)
    g = larm_forward(g, p.larm)
    g = ops.conv2d(g, p.back_w, p.back_b)
    g = ops.concat_channels(h, g)
    g = ops.conv2d(g, p.fuse_w, p.fuse_b, padding=1)
    return _unbatch(g, squeezed)


# ---------------------------------------------------------------------------
# MobileNetV2 inverted residual


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def create(cls, channels: int, dtype=np.float32) -> "BatchNormParams":
        return cls(gamma=_zeros(channels, dtype=dtype),
                   beta=_zeros(channels, dtype=dtype),
                   running_mean=np.zeros(channels, dtype=dtype),
                   running_var=np.ones(channels, dtype=dtype))

    def init(self, rng: np.random.Generator) -> None:
        c = self.gamma.shape[0]
        self.gamma.assign_(np.ones(c))
        self.beta.assign_(np.zeros(c))
        self.running_mean[...] = 0.0
        self.running_var[...] = 1.0

    def apply(self, x: Tensor, training: bool) -> Tensor:
        return ops.batch_norm2d(x, self.gamma, self.beta,
                                self.running_mean, self.running_var,
                                eps=self.eps, momentum=self.momentum,
                                training=training)

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta

    def buffers(self, prefix: str) -> Iterator[tuple[str, np.ndarray]]:
        yield f"{prefix}.running_mean", self.running_mean
        yield f"{prefix}.running_var", self.running_var


@dataclass
class InvertedResidualParams:
    """expand (absent at t=1) -> depthwise -> project, norms throughout."""

    stride: int
    expand_w: Optional[Tensor]
    bn1: Optional[BatchNormParams]
    dw_w: Tensor
    bn2: BatchNormParams
    proj_w: Tensor
    bn3: BatchNormParams

    @classmethod
    def create(cls, c_in: int, c_out: int, stride: int = 1,
               expand_ratio: int = 6, dtype=np.float32) -> "InvertedResidualParams":
        if stride not in (1, 2):
            raise ShapeError(f"inverted residual: stride must be 1 or 2, got {stride}")
        if expand_ratio < 1:
            raise ShapeError(f"inverted residual: expand_ratio must be >= 1, "
                             f"got {expand_ratio}")
        e = c_in * expand_ratio
        expand_w = None if expand_ratio == 1 else _zeros(e, c_in, 1, 1, dtype=dtype)
        bn1 = None if expand_ratio == 1 else BatchNormParams.create(e, dtype)
        return cls(stride=stride,
                   expand_w=expand_w, bn1=bn1,
                   dw_w=_zeros(e, 1, 3, 3, dtype=dtype),
                   bn2=BatchNormParams.create(e, dtype),
                   proj_w=_zeros(c_out, e, 1, 1, dtype=dtype),
                   bn3=BatchNormParams.create(c_out, dtype))

    @property
    def c_in(self) -> int:
        return self.expand_w.shape[1] if self.expand_w is not None else self.dw_w.shape[0]

    @property
    def c_out(self) -> int:
        return self.proj_w.shape[0]

    @property
    def expanded(self) -> int:
        return self.dw_w.shape[0]

    def init(self, rng: np.random.Generator) -> None:
        if self.expand_w is not None:
            _fill_uniform(self.expand_w, rng, self.c_in)
            self.bn1.init(rng)
        _fill_uniform(self.dw_w, rng, 9)
        self.bn2.init(rng)
        _fill_uniform(self.proj_w, rng, self.expanded)
        self.bn3.init(rng)

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        if self.expand_w is not None:
            yield f"{prefix}.expand_w", self.expand_w
            yield from self.bn1.named(f"{prefix}.bn1")
        yield f"{prefix}.dw_w", self.dw_w
        yield from self.bn2.named(f"{prefix}.bn2")
        yield f"{prefix}.proj_w", self.proj_w
        yield from self.bn3.named(f"{prefix}.bn3")

    def buffers(self, prefix: str) -> Iterator[tuple[str, np.ndarray]]:
        if self.bn1 is not None:
            yield from self.bn1.buffers(f"{prefix}.bn1")
        yield from self.bn2.buffers(f"{prefix}.bn2")
        yield from self.bn3.buffers(f"{prefix}.bn3")

    def param_count(self) -> int:
        e, ci, co = self.expanded, self.c_in, self.c_out
        n = 9 * e + 2 * e + e * co + 2 * co
        if self.expand_w is not None:
            n += ci * e + 2 * e
        return n


def inverted_residual_forward(x: Tensor, p: InvertedResidualParams,
                              training: bool = False) -> Tensor:
    h, squeezed = _as_batched(x)
    if h.shape[1] != p.c_in:
        raise ShapeError(f"inverted residual: input has {h.shape[1]} channels, "
                         f"parameters built for {p.c_in}")
    g = h
    if p.expand_w is not None:
        g = ops.relu6(p.bn1.apply(ops.conv2d(g, p.expand_w), training))
    g = ops.conv2d(g, p.dw_w, stride=p.stride, padding=1, groups=p.expanded)
    g = ops.relu6(p.bn2.apply(g, training))
    g = p.bn3.apply(ops.conv2d(g, p.proj_w), training)
    if p.stride == 1 and p.c_in == p.c_out:
        g = ops.add(h, g)
    return _unbatch(g, squeezed)


# ---------------------------------------------------------------------------
# Channel shuffle and the fusion-stage family


def shuffle_permutation(channels: int, n_groups: int) -> np.ndarray:
    """Channel order after viewing C as (n, C/n) and transposing:
    output channel j*n + i reads input channel i*(C/n) + j."""
    if n_groups < 1 or channels % n_groups:
        raise ShapeError(f"channel_shuffle: {n_groups} groups do not divide "
                         f"{channels} channels")
    return np.arange(channels).reshape(n_groups, channels // n_groups).T.reshape(-1)


def channel_shuffle(x: Tensor, n_groups: int) -> Tensor:
    h, squeezed = _as_batched(x)
    out = ops.permute_channels(h, shuffle_permutation(h.shape[1], n_groups))
    return _unbatch(out, squeezed)


@dataclass(frozen=True)
class FusionMode:
    mode: str = "sfusion"
    shuffle_groups: int = 2
    conv_groups: int = 2

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ShapeError(f"fusion mode must be one of {FUSION_MODES}, "
                             f"got {self.mode!r}")
        if self.shuffle_groups < 1 or self.conv_groups < 1:
            raise ShapeError("fusion group counts must be >= 1")


@dataclass
class SFusionParams:
    """Weights for one fusion stage; which fields are live depends on mode."""

    mode: FusionMode
    c_up: int
    c_skip: int
    c_out: int
    w: Optional[Tensor] = None
    b: Optional[Tensor] = None
    dw_w: Optional[Tensor] = None
    pw_w: Optional[Tensor] = None
    pw_b: Optional[Tensor] = None

    @classmethod
    def create(cls, mode: FusionMode, c_up: int, c_skip: int, c_out: int,
               dtype=np.float32) -> "SFusionParams":
        cat = c_up + c_skip
        k = mode.conv_groups
        p = cls(mode=mode, c_up=c_up, c_skip=c_skip, c_out=c_out)
        if mode.mode == "none":
            if c_out != c_up:
                raise ShapeError(f"fusion mode none passes {c_up} channels "
                                 f"through but {c_out} are configured")
            return p
        if mode.mode == "conv3x3":
            p.w = _zeros(c_out, cat, 3, 3, dtype=dtype)
            p.b = _zeros(c_out, dtype=dtype)
            return p
        if cat % k or c_out % k:
            raise ShapeError(f"fusion: conv_groups={k} does not divide "
                             f"concatenated {cat} and output {c_out} channels")
        if mode.mode == "dw_separable":
            p.dw_w = _zeros(cat, 1, 3, 3, dtype=dtype)
            p.pw_w = _zeros(c_out, cat // k, 1, 1, dtype=dtype)
            p.pw_b = _zeros(c_out, dtype=dtype)
            return p
        if cat % mode.shuffle_groups:
            raise ShapeError(f"fusion: shuffle_groups={mode.shuffle_groups} "
                             f"does not divide {cat} channels")
        p.w = _zeros(c_out, cat // k, 3, 3, dtype=dtype)
        p.b = _zeros(c_out, dtype=dtype)
        return p

    def init(self, rng: np.random.Generator) -> None:
        cat = self.c_up + self.c_skip
        if self.mode.mode == "conv3x3":
            _fill_uniform(self.w, rng, cat * 9)
            _fill_uniform(self.b, rng, cat * 9)
        elif self.mode.mode == "dw_separable":
            _fill_uniform(self.dw_w, rng, 9)
            _fill_uniform(self.pw_w, rng, cat // self.mode.conv_groups)
            _fill_uniform(self.pw_b, rng, cat // self.mode.conv_groups)
        elif self.mode.mode == "sfusion":
            fan = (cat // self.mode.conv_groups) * 9
            _fill_uniform(self.w, rng, fan)
            _fill_uniform(self.b, rng, fan)

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for n in ("w", "b", "dw_w", "pw_w", "pw_b"):
            t = getattr(self, n)
            if t is not None:
                yield f"{prefix}.{n}", t

    def param_count(self) -> int:
        cat = self.c_up + self.c_skip
        k = self.mode.conv_groups
        if self.mode.mode == "none":
            return 0
        if self.mode.mode == "conv3x3":
            return 9 * cat * self.c_out + self.c_out
        if self.mode.mode == "dw_separable":
            return 9 * cat + (cat // k) * self.c_out + self.c_out
        return 9 * (cat // k) * self.c_out + self.c_out


def sfusion_forward(up: Tensor, skip: Tensor, p: SFusionParams) -> Tensor:
    """Fuse a decoder feature with its same-resolution skip feature."""
    if p.mode.mode == "none":
        return up
    hu, squeezed = _as_batched(up)
    hs, _ = _as_batched(skip)
    if hu.shape[0] != hs.shape[0] or hu.shape[2:] != hs.shape[2:]:
        raise ShapeError(f"fusion: decoder {up.shape} and skip {skip.shape} "
                         f"do not share spatial dims")
    if hu.shape[1] != p.c_up or hs.shape[1] != p.c_skip:
        raise ShapeError(f"fusion: channels ({hu.shape[1]}, {hs.shape[1]}) do "
                         f"not match parameters ({p.c_up}, {p.c_skip})")
    h = ops.concat_channels(hu, hs)
    if p.mode.mode == "conv3x3":
        h = ops.conv2d(h, p.w, p.b, padding=1)
    elif p.mode.mode == "dw_separable":
        h = ops.conv2d(h, p.dw_w, stride=1, padding=1, groups=h.shape[1])
        h = ops.conv2d(h, p.pw_w, p.pw_b, groups=p.mode.conv_groups)
    else:
        h = channel_shuffle(h, p.mode.shuffle_groups)
        h = ops.conv2d(h, p.w, p.b, padding=1, groups=p.mode.conv_groups)
    return _unbatch(h, squeezed)
