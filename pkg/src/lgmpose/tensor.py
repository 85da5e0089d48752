"""Dense tensors and the reverse-mode gradient tape.

A :class:`Tensor` is a thin wrapper around a contiguous numpy array in
float32 or float64.  Operations (see :mod:`lgmpose.ops`) are plain
functions; when a :class:`GradTape` is active they append a node holding a
backward closure, and :func:`backward` replays those nodes in reverse to
produce a gradient for every tensor that participated.

The tape is append-only and thread-local: concurrent forward passes on
separate threads each see their own (or no) tape.  Tensors themselves are
never mutated by ops; the only sanctioned mutation is ``assign_`` on leaf
parameters, used by the optimiser and the weight loader.
"""

from __future__ import annotations

import itertools
import threading
import warnings
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import ShapeError

_ALLOWED = (np.float32, np.float64)


class Tensor:
    """A contiguous float32/float64 array with an identity for the tape."""

    __slots__ = ("data", "requires_grad", "tid")

    _ids = itertools.count()

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(np.dtype(dtype), copy=False)
        if arr.dtype not in _ALLOWED:
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.tid = next(Tensor._ids)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Return a defensive copy of the underlying array."""
        return self.data.copy()

    def assign_(self, values) -> None:
        """Overwrite the stored values in place (leaf parameters only)."""
        arr = np.asarray(values, dtype=self.data.dtype)
        if arr.shape != self.data.shape:
            raise ShapeError(f"assign_ shape mismatch: have {self.data.shape}, got {arr.shape}")
        self.data[...] = arr

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"


class _TapeNode:
    __slots__ = ("op", "input_ids", "output_id", "backward_fn")

    def __init__(self, op: str, input_ids, output_id: int, backward_fn):
        self.op = op
        self.input_ids = input_ids
        self.output_id = output_id
        self.backward_fn = backward_fn


_tls = threading.local()


def _stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def active_tape() -> Optional["GradTape"]:
    stack = _stack()
    return stack[-1] if stack else None


class GradTape:
    """Records the ops of a forward pass so :func:`backward` can replay them.

    Use as a context manager::

        with GradTape() as tape:
            loss = some_composition(x, params)
        grads = backward(tape, loss)
    """

    def __init__(self):
        self.nodes: list[_TapeNode] = []
        self._reachable: set[int] = set()
        self._dtypes: dict[int, np.dtype] = {}

    def __enter__(self) -> "GradTape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        top = _stack().pop()
        if top is not self:
            raise RuntimeError("GradTape contexts closed out of order")


class _PauseTape:
    """Context that hides any active tape (used by finite differences)."""

    def __enter__(self):
        _stack().append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _stack().pop()


def record(op: str, inputs: Iterable[Tensor], output: Tensor,
           backward_fn: Callable[[np.ndarray], list]) -> None:
    """Append a node to the active tape, if the op touches tracked state.

    ``backward_fn`` receives the upstream gradient as a numpy array shaped
    like the op output and returns one array (or None) per input, each in
    that input's dtype and shape.
    """
    tape = active_tape()
    if tape is None:
        return
    inputs = list(inputs)
    if not any(t.requires_grad or t.tid in tape._reachable for t in inputs):
        return
    tape._reachable.add(output.tid)
    for t in inputs:
        tape._dtypes.setdefault(t.tid, t.data.dtype)
    tape._dtypes[output.tid] = output.data.dtype
    tape.nodes.append(_TapeNode(op, [t.tid for t in inputs], output.tid, backward_fn))


def backward(tape: GradTape, loss: Tensor) -> dict[int, Tensor]:
    """Reverse-replay ``tape`` from scalar ``loss``.

    Returns a map from tensor id to gradient tensor covering every tensor
    that influenced the loss.  Look gradients up as ``grads[param.tid]``.
    A loss that never touched the tape yields an empty map and a warning
    rather than an exception, since that is nearly always a caller bug.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    if loss.tid not in tape._reachable:
        warnings.warn("loss is not connected to any recorded operation; "
                      "no gradients produced", stacklevel=2)
        return {}
    grads: dict[int, np.ndarray] = {
        loss.tid: np.ones_like(loss.data)
    }
    for node in reversed(tape.nodes):
        g_out = grads.get(node.output_id)
        if g_out is None:
            continue
        in_grads = node.backward_fn(g_out)
        if len(in_grads) != len(node.input_ids):
            raise RuntimeError(f"op {node.op}: backward returned {len(in_grads)} "
                               f"gradients for {len(node.input_ids)} inputs")
        for tid, g in zip(node.input_ids, in_grads):
            if g is None:
                continue
            have = grads.get(tid)
            grads[tid] = g if have is None else have + g
    return {tid: Tensor(g) for tid, g in grads.items()}


def grad_for(grads: dict[int, Tensor], t: Tensor) -> np.ndarray:
    """Convenience: the gradient array for ``t``, zeros if it never appeared."""
    g = grads.get(t.tid)
    return np.zeros_like(t.data) if g is None else g.data


def finite_diff_grad(f: Callable[[Tensor], Tensor], x: Tensor,
                     eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``sum(f(x))`` with respect to ``x``.

    Entirely tape-free, so it serves as an independent oracle for
    :func:`backward`.  Non-scalar outputs of ``f`` are summed, which matches
    seeding reverse mode with an all-ones upstream gradient.  Evaluation
    inherits ``x``'s dtype; use float64 inputs for verification work.
    """
    base = x.data.copy()
    grad = np.zeros(base.shape, dtype=np.float64)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    with _PauseTape():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(np.sum(f(Tensor(base.copy())).data, dtype=np.float64))
            flat[i] = orig - eps
            lo = float(np.sum(f(Tensor(base.copy())).data, dtype=np.float64))
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
    return grad
