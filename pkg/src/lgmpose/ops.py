"""From-scratch tensor kernels on a numpy substrate.

Every op follows the same pattern: validate shapes, compute the forward
result with float64 accumulation (cast back to the input dtype on the way
out), then register a backward closure on the active tape.  Nothing here
depends on any ML framework; matmul-heavy paths go through im2col so the
only primitive trusted for arithmetic is the BLAS matrix product, and the
naive loop references in :mod:`lgmpose.oracles` cross-check it.

Spatial tensors are strictly NCHW; single-sample convenience lives in the
block layer, not here.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import Tensor, record

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def _need_ndim(t: Tensor, ndim: int, op: str, role: str) -> None:
    if t.ndim != ndim:
        raise ShapeError(f"{op}: {role} must be {ndim}-d, got shape {t.shape}")


def _f64(t: Tensor) -> np.ndarray:
    return t.data.astype(np.float64, copy=False)


def _pad_hw(a: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _windows(a: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Strided (n, c, ho, wo, kh, kw) view of an already-padded array."""
    win = sliding_window_view(a, (kh, kw), axis=(2, 3))
    return win[:, :, ::sh, ::sw]


def _is_depthwise(cin: int, cout: int, cpg: int, groups: int) -> bool:
    return groups == cin and cout == cin and cpg == 1


def _conv_fwd(x64, w64, sh, sw, ph, pw, groups):
    n, cin, h, w = x64.shape
    cout, cpg, kh, kw = w64.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    xp = _pad_hw(x64, ph, pw)
    if groups == 1:
        win = _windows(xp, kh, kw, sh, sw)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
        y = cols @ w64.reshape(cout, cin * kh * kw).T
        return y.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    if _is_depthwise(cin, cout, cpg, groups):
        # Depthwise runs as kh*kw shifted multiply-adds; no im2col buffer.
        y = np.zeros((n, cin, ho, wo), dtype=np.float64)
        for ky in range(kh):
            for kx in range(kw):
                patch = xp[:, :, ky:ky + (ho - 1) * sh + 1:sh,
                           kx:kx + (wo - 1) * sw + 1:sw]
                y += patch * w64[:, 0, ky, kx][:, None, None]
        return y
    win = _windows(xp, kh, kw, sh, sw).reshape(n, groups, cpg, ho, wo, kh, kw)
    wg = w64.reshape(groups, cout // groups, cpg * kh * kw)
    y = np.empty((n, cout, ho, wo), dtype=np.float64)
    cog = cout // groups
    for gi in range(groups):
        cols = win[:, gi].transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cpg * kh * kw)
        y[:, gi * cog:(gi + 1) * cog] = (
            cols @ wg[gi].T).reshape(n, ho, wo, cog).transpose(0, 3, 1, 2)
    return y


def _conv_dx(g64, w64, sh, sw, ph, pw, in_h, in_w, groups):
    """Scatter the output gradient through the kernel taps (also the
    transposed-convolution forward when called with the roles swapped)."""
    n, cout, ho, wo = g64.shape
    _, cpg, kh, kw = w64.shape
    cin = cpg * groups
    full = np.zeros((n, cin, in_h + 2 * ph, in_w + 2 * pw), dtype=np.float64)
    span_h = (ho - 1) * sh + 1
    span_w = (wo - 1) * sw + 1
    cog = cout // groups
    for ky in range(kh):
        for kx in range(kw):
            if _is_depthwise(cin, cout, cpg, groups):
                t = g64 * w64[:, 0, ky, kx][:, None, None]
            elif groups == 1:
                t = np.tensordot(g64, w64[:, :, ky, kx], axes=([1], [0]))
                t = t.transpose(0, 3, 1, 2)
            else:
                t = np.empty((n, cin, ho, wo), dtype=np.float64)
                for gi in range(groups):
                    blk = np.tensordot(g64[:, gi * cog:(gi + 1) * cog],
                                       w64[gi * cog:(gi + 1) * cog, :, ky, kx],
                                       axes=([1], [0]))
                    t[:, gi * cpg:(gi + 1) * cpg] = blk.transpose(0, 3, 1, 2)
            full[:, :, ky:ky + span_h:sh, kx:kx + span_w:sw] += t
    if ph or pw:
        return np.ascontiguousarray(full[:, :, ph:ph + in_h, pw:pw + in_w])
    return full


def _conv_dw(x64, g64, sh, sw, ph, pw, kh, kw, groups):
    n, cin, _, _ = x64.shape
    _, cout, ho, wo = g64.shape
    xp = _pad_hw(x64, ph, pw)
    cpg = cin // groups
    cog = cout // groups
    if _is_depthwise(cin, cout, cpg, groups):
        dw = np.zeros((cin, 1, kh, kw), dtype=np.float64)
        for ky in range(kh):
            for kx in range(kw):
                patch = xp[:, :, ky:ky + (ho - 1) * sh + 1:sh,
                           kx:kx + (wo - 1) * sw + 1:sw]
                dw[:, 0, ky, kx] = np.sum(patch * g64, axis=(0, 2, 3))
        return dw
    win = _windows(xp, kh, kw, sh, sw)
    if groups == 1:
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
        gr = g64.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        return (gr.T @ cols).reshape(cout, cin, kh, kw)
    win = win.reshape(n, groups, cpg, ho, wo, kh, kw)
    dw = np.empty((cout, cpg, kh, kw), dtype=np.float64)
    for gi in range(groups):
        cols = win[:, gi].transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cpg * kh * kw)
        gr = g64[:, gi * cog:(gi + 1) * cog].transpose(0, 2, 3, 1).reshape(n * ho * wo, cog)
        dw[gi * cog:(gi + 1) * cog] = (gr.T @ cols).reshape(cog, cpg, kh, kw)
    return dw


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, *,
           stride=1, padding=0, groups: int = 1) -> Tensor:
    """2-d cross-correlation, NCHW, weight (cout, cin/groups, kh, kw)."""
    _need_ndim(x, 4, "conv2d", "input")
    _need_ndim(w, 4, "conv2d", "weight")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise ShapeError(f"conv2d: bad stride/padding ({stride}, {padding})")
    n, cin, h, wid = x.shape
    cout, cpg, kh, kw = w.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ShapeError(f"conv2d: groups={groups} does not divide "
                         f"cin={cin} and cout={cout}")
    if cpg != cin // groups:
        raise ShapeError(f"conv2d: weight expects {cpg} channels per group, "
                         f"input provides {cin // groups}")
    if h + 2 * ph < kh or wid + 2 * pw < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded "
                         f"input {h + 2 * ph}x{wid + 2 * pw}")
    if b is not None:
        _need_ndim(b, 1, "conv2d", "bias")
        if b.shape[0] != cout:
            raise ShapeError(f"conv2d: bias has {b.shape[0]} entries for {cout} outputs")

    x64 = _f64(x)
    w64 = _f64(w)
    y64 = _conv_fwd(x64, w64, sh, sw, ph, pw, groups)
    if b is not None:
        y64 = y64 + _f64(b)[:, None, None]
    out = Tensor(y64.astype(x.dtype))

    def backward_fn(g):
        g64 = g.astype(np.float64, copy=False)
        dx = _conv_dx(g64, w64, sh, sw, ph, pw, h, wid, groups).astype(x.dtype)
        dw = _conv_dw(x64, g64, sh, sw, ph, pw, kh, kw, groups).astype(w.dtype)
        if b is None:
            return [dx, dw]
        return [dx, dw, g64.sum(axis=(0, 2, 3)).astype(b.dtype)]

    record("conv2d", [x, w] if b is None else [x, w, b], out, backward_fn)
    return out


def conv_transpose2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, *,
                     stride=2, padding=1) -> Tensor:
    """Transposed convolution, weight (cin, cout, kh, kw), groups fixed at 1.

    Output size per axis is ``(in - 1) * stride - 2 * padding + k``; with the
    house 4x4/stride-2/pad-1 setting that doubles the feature map.
    """
    _need_ndim(x, 4, "conv_transpose2d", "input")
    _need_ndim(w, 4, "conv_transpose2d", "weight")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    n, cin, h, wid = x.shape
    wcin, cout, kh, kw = w.shape
    if wcin != cin:
        raise ShapeError(f"conv_transpose2d: weight expects {wcin} input "
                         f"channels, input has {cin}")
    out_h = (h - 1) * sh - 2 * ph + kh
    out_w = (wid - 1) * sw - 2 * pw + kw
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv_transpose2d: output would be {out_h}x{out_w}")
    if b is not None:
        _need_ndim(b, 1, "conv_transpose2d", "bias")
        if b.shape[0] != cout:
            raise ShapeError(f"conv_transpose2d: bias has {b.shape[0]} entries "
                             f"for {cout} outputs")

    x64 = _f64(x)
    w64 = _f64(w)
    # Scatter with roles swapped: x plays the "output gradient" of a conv
    # whose kernel is w seen as (cout_role=cin, cpg=cout, kh, kw).
    y64 = _conv_dx(x64, w64, sh, sw, ph, pw, out_h, out_w, groups=1)
    if b is not None:
        y64 = y64 + _f64(b)[:, None, None]
    out = Tensor(y64.astype(x.dtype))

    def backward_fn(g):
        g64 = g.astype(np.float64, copy=False)
        # dx gathers g through the same taps: a plain conv with kernel w.
        dx = _conv_fwd(g64, w64, sh, sw, ph, pw, groups=1).astype(x.dtype)
        gp = _pad_hw(g64, ph, pw)
        win = _windows(gp, kh, kw, sh, sw)  # (n, cout, h, wid, kh, kw)
        xr = x64.transpose(1, 0, 2, 3).reshape(cin, n * h * wid)
        wr = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wid, cout * kh * kw)
        dw = (xr @ wr).reshape(cin, cout, kh, kw).astype(w.dtype)
        if b is None:
            return [dx, dw]
        return [dx, dw, g64.sum(axis=(0, 2, 3)).astype(b.dtype)]

    record("conv_transpose2d", [x, w] if b is None else [x, w, b], out, backward_fn)
    return out


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map over the last axis: y = x @ w.T + b, weight (fout, fin)."""
    _need_ndim(w, 2, "linear", "weight")
    fout, fin = w.shape
    if x.ndim < 1 or x.shape[-1] != fin:
        raise ShapeError(f"linear: input last axis is {x.shape[-1:]}, weight wants {fin}")
    if b is not None and b.shape != (fout,):
        raise ShapeError(f"linear: bias shape {b.shape} does not match fout={fout}")
    x64 = _f64(x)
    w64 = _f64(w)
    y64 = x64 @ w64.T
    if b is not None:
        y64 = y64 + _f64(b)
    out = Tensor(y64.astype(x.dtype))

    def backward_fn(g):
        g64 = g.astype(np.float64, copy=False)
        dx = (g64 @ w64).astype(x.dtype)
        g2 = g64.reshape(-1, fout)
        x2 = x64.reshape(-1, fin)
        dw = (g2.T @ x2).astype(w.dtype)
        if b is None:
            return [dx, dw]
        return [dx, dw, g2.sum(axis=0).astype(b.dtype)]

    record("linear", [x, w] if b is None else [x, w, b], out, backward_fn)
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis (population variance), then scale/shift."""
    dim = x.shape[-1]
    if gamma.shape != (dim,) or beta.shape != (dim,):
        raise ShapeError(f"layer_norm: gamma/beta must be ({dim},), got "
                         f"{gamma.shape} and {beta.shape}")
    x64 = _f64(x)
    mu = x64.mean(axis=-1, keepdims=True)
    var = np.mean((x64 - mu) ** 2, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x64 - mu) * inv
    g64 = _f64(gamma)
    y64 = xhat * g64 + _f64(beta)
    out = Tensor(y64.astype(x.dtype))

    def backward_fn(g):
        gu = g.astype(np.float64, copy=False)
        dy = gu * g64
        m1 = dy.mean(axis=-1, keepdims=True)
        m2 = (dy * xhat).mean(axis=-1, keepdims=True)
        dx = (inv * (dy - m1 - xhat * m2)).astype(x.dtype)
        lead = tuple(range(gu.ndim - 1))
        dgamma = (gu * xhat).sum(axis=lead).astype(gamma.dtype)
        dbeta = gu.sum(axis=lead).astype(beta.dtype)
        return [dx, dgamma, dbeta]

    record("layer_norm", [x, gamma, beta], out, backward_fn)
    return out


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                 running_mean: np.ndarray, running_var: np.ndarray, *,
                 eps: float = 1e-5, momentum: float = 0.1,
                 training: bool = False) -> Tensor:
    """Per-channel batch norm on NCHW input.

    Training mode normalises with the biased batch variance and folds the
    unbiased variance into the running estimate:
    ``running <- (1 - momentum) * running + momentum * batch``.
    The running buffers are plain arrays updated in place; they are state,
    not differentiable parameters.
    """
    _need_ndim(x, 4, "batch_norm2d", "input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm2d: gamma/beta must be ({c},)")
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise ShapeError(f"batch_norm2d: running stats must be ({c},)")
    x64 = _f64(x)
    g64 = _f64(gamma)
    if training:
        n, _, h, w = x.shape
        count = n * h * w
        mu = x64.mean(axis=(0, 2, 3))
        var_b = x64.var(axis=(0, 2, 3))
        var_u = var_b * (count / (count - 1)) if count > 1 else var_b
        rm64 = running_mean.astype(np.float64)
        rv64 = running_var.astype(np.float64)
        running_mean[...] = ((1.0 - momentum) * rm64 + momentum * mu).astype(running_mean.dtype)
        running_var[...] = ((1.0 - momentum) * rv64 + momentum * var_u).astype(running_var.dtype)
    else:
        mu = running_mean.astype(np.float64)
        var_b = running_var.astype(np.float64)
    inv = 1.0 / np.sqrt(var_b + eps)
    xhat = (x64 - mu[:, None, None]) * inv[:, None, None]
    y64 = xhat * g64[:, None, None] + _f64(beta)[:, None, None]
    out = Tensor(y64.astype(x.dtype))

    def backward_fn(g):
        gu = g.astype(np.float64, copy=False)
        dgamma = (gu * xhat).sum(axis=(0, 2, 3)).astype(gamma.dtype)
        dbeta = gu.sum(axis=(0, 2, 3)).astype(beta.dtype)
        scaled = gu * (g64 * inv)[:, None, None]
        if training:
            m1 = scaled.mean(axis=(0, 2, 3), keepdims=True)
            m2 = (scaled * xhat).mean(axis=(0, 2, 3), keepdims=True)
            dx = (scaled - m1 - xhat * m2).astype(x.dtype)
        else:
            dx = scaled.astype(x.dtype)
        return [dx, dgamma, dbeta]

    record("batch_norm2d", [x, gamma, beta], out, backward_fn)
    return out


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh form:
    0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))."""
    x64 = _f64(x)
    u = _GELU_C * (x64 + _GELU_A * x64 ** 3)
    t = np.tanh(u)
    y64 = 0.5 * x64 * (1.0 + t)
    out = Tensor(y64.astype(x.dtype))

    def backward_fn(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x64 ** 2)
        local = 0.5 * (1.0 + t) + 0.5 * x64 * (1.0 - t ** 2) * du
        return [(g.astype(np.float64, copy=False) * local).astype(x.dtype)]

    record("gelu", [x], out, backward_fn)
    return out


def relu6(x: Tensor) -> Tensor:
    """min(max(x, 0), 6); the gradient is zero outside the open interval."""
    y = np.clip(x.data, 0.0, 6.0)
    out = Tensor(y)
    mask = (x.data > 0.0) & (x.data < 6.0)

    def backward_fn(g):
        return [(g * mask).astype(x.dtype)]

    record("relu6", [x], out, backward_fn)
    return out


def activation(x: Tensor, kind: str) -> Tensor:
    """Dispatch to one of the supported elementwise nonlinearities."""
    if kind == "gelu":
        return gelu(x)
    if kind == "relu6":
        return relu6(x)
    raise ValueError(f"activation: unknown kind {kind!r}")


def reshape(x: Tensor, shape) -> Tensor:
    """Row-major reshape; element order is untouched, so the backward pass
    is the inverse reshape."""
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    out = Tensor(x.data.reshape(shape))
    record("reshape", [x], out,
           lambda g: [g.reshape(x.shape).astype(x.dtype)])
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two NCHW tensors along the channel axis."""
    _need_ndim(a, 4, "concat_channels", "first input")
    _need_ndim(b, 4, "concat_channels", "second input")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    ca = a.shape[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1))

    def backward_fn(g):
        return [np.ascontiguousarray(g[:, :ca]).astype(a.dtype),
                np.ascontiguousarray(g[:, ca:]).astype(b.dtype)]

    record("concat_channels", [a, b], out, backward_fn)
    return out


def permute_channels(x: Tensor, perm) -> Tensor:
    """Reorder channels: out[:, j] = x[:, perm[j]].  ``perm`` must be a
    permutation of range(channels); the backward pass applies its inverse."""
    _need_ndim(x, 4, "permute_channels", "input")
    p = np.asarray(perm, dtype=np.int64)
    c = x.shape[1]
    if p.shape != (c,) or not np.array_equal(np.sort(p), np.arange(c)):
        raise ShapeError(f"permute_channels: perm is not a permutation of range({c})")
    inv = np.argsort(p)
    out = Tensor(np.ascontiguousarray(x.data[:, p]))

    def backward_fn(g):
        return [np.ascontiguousarray(g[:, inv]).astype(x.dtype)]

    record("permute_channels", [x], out, backward_fn)
    return out


def pad2d(x: Tensor, pads: tuple[int, int, int, int]) -> Tensor:
    """Zero-pad the spatial axes by (top, bottom, left, right)."""
    _need_ndim(x, 4, "pad2d", "input")
    top, bottom, left, right = (int(v) for v in pads)
    if min(top, bottom, left, right) < 0:
        raise ShapeError(f"pad2d: negative pad {pads}")
    out = Tensor(np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right))))
    h, w = x.shape[2], x.shape[3]

    def backward_fn(g):
        return [np.ascontiguousarray(g[:, :, top:top + h, left:left + w]).astype(x.dtype)]

    record("pad2d", [x], out, backward_fn)
    return out


def crop2d(x: Tensor, crops: tuple[int, int, int, int]) -> Tensor:
    """Remove (top, bottom, left, right) rows/columns from the spatial axes."""
    _need_ndim(x, 4, "crop2d", "input")
    top, bottom, left, right = (int(v) for v in crops)
    h, w = x.shape[2], x.shape[3]
    if min(top, bottom, left, right) < 0 or top + bottom >= h or left + right >= w:
        raise ShapeError(f"crop2d: crops {crops} do not fit input {x.shape}")
    out = Tensor(np.ascontiguousarray(x.data[:, :, top:h - bottom, left:w - right]))

    def backward_fn(g):
        return [np.pad(g, ((0, 0), (0, 0), (top, bottom), (left, right))).astype(x.dtype)]

    record("crop2d", [x], out, backward_fn)
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    record("add", [a, b], out, lambda g: [g.astype(a.dtype), g.astype(b.dtype)])
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    record("sub", [a, b], out, lambda g: [g.astype(a.dtype), (-g).astype(b.dtype)])
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)

    def backward_fn(g):
        return [(g * b.data).astype(a.dtype), (g * a.data).astype(b.dtype)]

    record("mul", [a, b], out, backward_fn)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * c)
    record("scale", [x], out, lambda g: [(g * c).astype(x.dtype)])
    return out


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor (float64 accumulation)."""
    out = Tensor(np.sum(x.data, dtype=np.float64).astype(x.dtype))

    def backward_fn(g):
        return [np.full(x.shape, g.reshape(()), dtype=x.dtype)]

    record("tsum", [x], out, backward_fn)
    return out


def tmean(x: Tensor) -> Tensor:
    """Mean of all elements, as a scalar tensor."""
    n = x.size
    out = Tensor((np.sum(x.data, dtype=np.float64) / n).astype(x.dtype))

    def backward_fn(g):
        return [np.full(x.shape, g.reshape(()) / n, dtype=x.dtype)]

    record("tmean", [x], out, backward_fn)
    return out
