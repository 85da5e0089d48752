"""Non-parametric patch transposes: the three pure permutations that carry
feature maps between spatial layout and the two token layouts mixed by the
attention-free module in :mod:`lgmpose.blocks`.

Layouts, for a (d, H, W) feature map cut into patch_h x patch_w patches
(P = patch_h * patch_w pixels per patch, N = (H / patch_h) * (W / patch_w)
patches):

* op1: (d, H, W) -> (P, d, N).  Pixel (y, x) of channel c lands at
  ``[p, c, n]`` with ``n = (y // patch_h) * (W // patch_w) + x // patch_w``
  (row-major patch index) and ``p = (y % patch_h) * patch_w + x % patch_w``
  (row-major offset inside the patch).  The last axis then enumerates
  patches, so an MLP over it mixes information across the whole map.
* op2: (P, d, N) -> (N, d, P), plain exchange of the outer and inner axes;
  the last axis now enumerates pixels within a patch.
* op3: (N, d, P) -> (d, H, W), the exact inverse of op2 followed by op1,
  so ``op3(op2(op1(x))) == x`` bit for bit.

All three accept any number of leading batch axes.  Being permutations
they carry no parameters, cost no multiply-accumulates, and their backward
passes are just the inverse permutations.

Feature maps whose sides are not multiples of the patch are handled one
level up (see :func:`pad_for_patches`); the ops themselves reject them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, record


@dataclass(frozen=True)
class PatchDims:
    """Geometry of a patch decomposition, validated once at construction."""

    channels: int
    height: int
    width: int
    patch_h: int
    patch_w: int

    def __post_init__(self):
        for name in ("channels", "height", "width", "patch_h", "patch_w"):
            if getattr(self, name) < 1:
                raise ShapeError(f"PatchDims: {name} must be positive")
        if self.height % self.patch_h or self.width % self.patch_w:
            raise ShapeError(
                f"PatchDims: feature map {self.height}x{self.width} is not "
                f"divisible by patch {self.patch_h}x{self.patch_w}")

    @property
    def pixels_per_patch(self) -> int:
        return self.patch_h * self.patch_w

    @property
    def num_patches(self) -> int:
        return (self.height // self.patch_h) * (self.width // self.patch_w)


def pad_for_patches(h: int, w: int, patch_h: int, patch_w: int) -> tuple[int, int, int, int]:
    """Symmetric zero-pad amounts (top, bottom, left, right) that round the
    spatial size up to whole patches; the odd pixel goes to bottom/right."""
    need_h = (-h) % patch_h
    need_w = (-w) % patch_w
    return need_h // 2, need_h - need_h // 2, need_w // 2, need_w - need_w // 2


def _check_tail(t: Tensor, dims: PatchDims, op: str, tail: tuple[int, int, int]) -> None:
    if t.ndim < 3 or t.shape[-3:] != tail:
        raise ShapeError(f"{op}: expected trailing shape {tail} for {dims}, "
                         f"got {t.shape}")


def _op1_arr(a: np.ndarray, d: PatchDims) -> np.ndarray:
    lead = a.shape[:-3]
    gh = d.height // d.patch_h
    gw = d.width // d.patch_w
    a = a.reshape(*lead, d.channels, gh, d.patch_h, gw, d.patch_w)
    k = len(lead)
    # (..., c, gy, py, gx, px) -> (..., py, px, c, gy, gx)
    order = tuple(range(k)) + (k + 2, k + 4, k, k + 1, k + 3)
    a = np.ascontiguousarray(a.transpose(order))
    return a.reshape(*lead, d.pixels_per_patch, d.channels, d.num_patches)


def _op1_inv_arr(u: np.ndarray, d: PatchDims) -> np.ndarray:
    lead = u.shape[:-3]
    gh = d.height // d.patch_h
    gw = d.width // d.patch_w
    u = u.reshape(*lead, d.patch_h, d.patch_w, d.channels, gh, gw)
    k = len(lead)
    # (..., py, px, c, gy, gx) -> (..., c, gy, py, gx, px)
    order = tuple(range(k)) + (k + 2, k + 3, k, k + 4, k + 1)
    u = np.ascontiguousarray(u.transpose(order))
    return u.reshape(*lead, d.channels, d.height, d.width)


def _op2_arr(u: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.swapaxes(u, -3, -1))


def npt_op1(x: Tensor, dims: PatchDims) -> Tensor:
    """(..., d, H, W) -> (..., P, d, N); see the module docstring for the map."""
    _check_tail(x, dims, "npt_op1", (dims.channels, dims.height, dims.width))
    out = Tensor(_op1_arr(x.data, dims))
    record("npt_op1", [x], out,
           lambda g: [_op1_inv_arr(g, dims).astype(x.dtype)])
    return out


def npt_op2(u: Tensor, dims: PatchDims) -> Tensor:
    """(..., P, d, N) -> (..., N, d, P); an involution (its own inverse)."""
    _check_tail(u, dims, "npt_op2",
                (dims.pixels_per_patch, dims.channels, dims.num_patches))
    out = Tensor(_op2_arr(u.data))
    record("npt_op2", [u], out, lambda g: [_op2_arr(g).astype(u.dtype)])
    return out


def npt_op3(v: Tensor, dims: PatchDims) -> Tensor:
    """(..., N, d, P) -> (..., d, H, W); inverse of op2 then op1 combined."""
    _check_tail(v, dims, "npt_op3",
                (dims.num_patches, dims.channels, dims.pixels_per_patch))
    out = Tensor(_op1_inv_arr(_op2_arr(v.data), dims))
    record("npt_op3", [v], out,
           lambda g: [_op2_arr(_op1_arr(g, dims)).astype(v.dtype)])
    return out


def flat_permutation(dims: PatchDims) -> np.ndarray:
    """Index vector pi with ``op1(x).flat[i] == x.flat[pi[i]]`` for a single
    (d, H, W) sample, built straight from the documented index arithmetic.
    Useful for permutation-matrix checks without running the op itself."""
    d, h, w = dims.channels, dims.height, dims.width
    gw = w // dims.patch_w
    pi = np.empty(d * h * w, dtype=np.int64)
    for c in range(d):
        for y in range(h):
            for x in range(w):
                n = (y // dims.patch_h) * gw + (x // dims.patch_w)
                p = (y % dims.patch_h) * dims.patch_w + (x % dims.patch_w)
                dst = (p * d + c) * dims.num_patches + n
                pi[dst] = (c * h + y) * w + x
    return pi
