"""Shared test helpers: random tensors, the gradient cross-check, and the
one expensive toy-training run reused by several modules."""

from __future__ import annotations

import time

import numpy as np
import pytest

from lgmpose import ops
from lgmpose.tensor import GradTape, Tensor, backward, finite_diff_grad, grad_for


@pytest.fixture(scope="session")
def long_toy_run():
    """One full-length toy fit shared by the convergence tests; yields the
    result together with its wall-clock duration in seconds."""
    from lgmpose.train import train_toy
    t0 = time.perf_counter()
    result = train_toy(steps=200, seed=0, n_samples=8)
    return result, time.perf_counter() - t0


def rand_t(rng, *shape, dtype=np.float64, requires_grad=True, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, dtype=dtype,
                  requires_grad=requires_grad)


def _eval_with(fn, leaves, idx, replacement, weight):
    """Evaluate weight * fn() with leaves[idx] temporarily holding other
    values."""
    saved = leaves[idx].data
    leaves[idx].data = replacement.data.astype(saved.dtype)
    try:
        return Tensor(fn().data * weight)
    finally:
        leaves[idx].data = saved


def gradcheck(fn, leaves, rtol=1e-4, eps=1e-5, picks=None):
    """Reverse-mode gradient of sum(w * fn()) vs central differences, per
    leaf, where w is a fixed random positive weighting.

    A plain unweighted sum would be blind wherever the output total is
    constant in a leaf (batch norm in training mode sums to N * beta no
    matter the input, a residual around it leaves only the identity), so
    both sides would reduce to finite-difference noise.  The relative error
    is measured against the larger gradient magnitude, with an absolute
    floor so all-zero gradients compare cleanly.  ``picks`` restricts the
    check to a subset of leaf indices (the randomized sweeps rotate through
    leaves instead of paying for every one each time).
    """
    with GradTape() as tape:
        out = fn()
        weight = np.random.default_rng(90731).uniform(0.5, 1.5, out.shape)
        loss = ops.tsum(ops.mul(out, Tensor(weight.astype(out.dtype))))
    grads = backward(tape, loss)
    for i in range(len(leaves)) if picks is None else picks:
        leaf = leaves[i]
        num = finite_diff_grad(
            lambda t, _i=i: _eval_with(fn, leaves, _i, t, weight), leaf, eps)
        ana = grad_for(grads, leaf).astype(np.float64)
        scale = max(np.max(np.abs(num)), np.max(np.abs(ana)), 1e-8)
        err = np.max(np.abs(ana - num)) / scale
        assert err < rtol, f"gradient leaf {i}: rel err {err:.3e} >= {rtol}"
