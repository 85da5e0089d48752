"""Naive reference implementations used only for verification.

Everything here is written as literal loops over the defining sums, with
float64 accumulators and no shared helpers with :mod:`lgmpose.ops`.  They
are deliberately slow; tests call them on small operands.  Inputs and
outputs are plain numpy arrays.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_naive(x, w, b=None, stride=1, padding=0, groups=1):
    """Seven nested loops straight from the cross-correlation definition."""
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    ph, pw = (padding, padding) if np.isscalar(padding) else padding
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, cin, h, wid = x.shape
    cout, cpg, kh, kw = w.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wid + 2 * pw - kw) // sw + 1
    y = np.zeros((n, cout, ho, wo), dtype=np.float64)
    cog = cout // groups
    for ni in range(n):
        for oc in range(cout):
            gi = oc // cog
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ic in range(cpg):
                        src_c = gi * cpg + ic
                        for ky in range(kh):
                            iy = oy * sh + ky - ph
                            if iy < 0 or iy >= h:
                                continue
                            for kx in range(kw):
                                ix = ox * sw + kx - pw
                                if ix < 0 or ix >= wid:
                                    continue
                                acc += x[ni, src_c, iy, ix] * w[oc, ic, ky, kx]
                    if b is not None:
                        acc += float(b[oc])
                    y[ni, oc, oy, ox] = acc
    return y


def conv_transpose2d_naive(x, w, b=None, stride=2, padding=1):
    """Scatter every input element through every kernel tap."""
    sh, sw = (stride, stride) if np.isscalar(stride) else stride
    ph, pw = (padding, padding) if np.isscalar(padding) else padding
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, cin, h, wid = x.shape
    _, cout, kh, kw = w.shape
    out_h = (h - 1) * sh - 2 * ph + kh
    out_w = (wid - 1) * sw - 2 * pw + kw
    y = np.zeros((n, cout, out_h, out_w), dtype=np.float64)
    for ni in range(n):
        for ic in range(cin):
            for iy in range(h):
                for ix in range(wid):
                    v = x[ni, ic, iy, ix]
                    for oc in range(cout):
                        for ky in range(kh):
                            oy = iy * sh + ky - ph
                            if oy < 0 or oy >= out_h:
                                continue
                            for kx in range(kw):
                                ox = ix * sw + kx - pw
                                if ox < 0 or ox >= out_w:
                                    continue
                                y[ni, oc, oy, ox] += v * w[ic, oc, ky, kx]
    if b is not None:
        for oc in range(cout):
            y[:, oc] += float(b[oc])
    return y


def linear_naive(x, w, b=None):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    lead = x.shape[:-1]
    fin = x.shape[-1]
    fout = w.shape[0]
    x2 = x.reshape(-1, fin)
    y = np.zeros((x2.shape[0], fout), dtype=np.float64)
    for r in range(x2.shape[0]):
        for o in range(fout):
            acc = 0.0
            for i in range(fin):
                acc += x2[r, i] * w[o, i]
            if b is not None:
                acc += float(b[o])
            y[r, o] = acc
    return y.reshape(*lead, fout)


def layer_norm_naive(x, gamma, beta, eps=1e-5):
    x = np.asarray(x, dtype=np.float64)
    dim = x.shape[-1]
    x2 = x.reshape(-1, dim)
    y = np.zeros_like(x2)
    for r in range(x2.shape[0]):
        mu = sum(x2[r, i] for i in range(dim)) / dim
        var = sum((x2[r, i] - mu) ** 2 for i in range(dim)) / dim
        inv = 1.0 / math.sqrt(var + eps)
        for i in range(dim):
            y[r, i] = (x2[r, i] - mu) * inv * float(gamma[i]) + float(beta[i])
    return y.reshape(x.shape)


def batch_norm2d_naive(x, gamma, beta, running_mean, running_var,
                       eps=1e-5, training=False):
    """Forward only; running stats are read, never written."""
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    y = np.zeros_like(x)
    for ch in range(c):
        if training:
            vals = [x[ni, ch, iy, ix] for ni in range(n)
                    for iy in range(h) for ix in range(w)]
            mu = sum(vals) / len(vals)
            var = sum((v - mu) ** 2 for v in vals) / len(vals)
        else:
            mu = float(running_mean[ch])
            var = float(running_var[ch])
        inv = 1.0 / math.sqrt(var + eps)
        for ni in range(n):
            for iy in range(h):
                for ix in range(w):
                    y[ni, ch, iy, ix] = ((x[ni, ch, iy, ix] - mu) * inv
                                         * float(gamma[ch]) + float(beta[ch]))
    return y


def channel_shuffle_naive(x, n_groups):
    """Regroup channels by explicit index arithmetic on each output slot."""
    x = np.asarray(x)
    c = x.shape[1]
    per = c // n_groups
    y = np.empty_like(x)
    for j in range(per):
        for i in range(n_groups):
            y[:, j * n_groups + i] = x[:, i * per + j]
    return y
