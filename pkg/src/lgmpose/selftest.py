"""Built-in verification suites, runnable from the CLI and the service.

These are compact, fully seeded versions of the heavyweight test-suite
checks: layout bijection, kernel-vs-oracle equivalence, gradient-vs-finite-
difference agreement, conv/deconv adjointness, closed-form cost accounting,
and the heatmap round trip.  Every case is deterministic, so two runs
produce identical reports apart from timings.

``corrupt_npt`` is a negative-control hook: it injects a single element
swap into the patch layout chain, which the bijection suite must catch.
A selftest that cannot fail is not a test.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import ops, oracles
from .blocks import LarmParams, MlpBlockParams, larm_forward, mlp_block
from .heatmap import KeypointSet, decode_heatmaps, gaussian_targets, oks, pckh
from .model import build_model, cost_table, count_params, reference_config, toy_config
from .npt import PatchDims, flat_permutation, npt_op1, npt_op2, npt_op3
from .tensor import GradTape, Tensor, backward, finite_diff_grad, grad_for


@dataclass
class SuiteResult:
    name: str
    passed: int = 0
    failed: int = 0
    duration_ms: float = 0.0
    failures: list = field(default_factory=list)

    def check(self, ok: bool, label: str) -> None:
        if ok:
            self.passed += 1
        else:
            self.failed += 1
            self.failures.append(label)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "failed": self.failed,
                "duration_ms": self.duration_ms, "failures": list(self.failures)}


@dataclass
class SelftestReport:
    suites: list

    @property
    def ok(self) -> bool:
        return all(s.failed == 0 for s in self.suites)

    @property
    def total_passed(self) -> int:
        return sum(s.passed for s in self.suites)

    @property
    def total_failed(self) -> int:
        return sum(s.failed for s in self.suites)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "total_passed": self.total_passed,
                "total_failed": self.total_failed,
                "suites": [s.to_dict() for s in self.suites]}


def _suite_npt(corrupt: bool) -> SuiteResult:
    r = SuiteResult("npt_bijection")
    rng = np.random.default_rng(11)
    for case in range(60):
        d = int(rng.integers(1, 6))
        ph, pw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        h = ph * int(rng.integers(1, 5))
        w = pw * int(rng.integers(1, 5))
        dims = PatchDims(d, h, w, ph, pw)
        x = Tensor(rng.standard_normal((d, h, w)).astype(np.float32))
        u = npt_op1(x, dims)
        if corrupt and u.size >= 2:
            bad = u.data.copy()
            bad.flat[[0, 1]] = bad.flat[[1, 0]]
            u = Tensor(bad)
        y = npt_op3(npt_op2(u, dims), dims)
        r.check(np.array_equal(x.data, y.data), f"round trip case {case}")
    dims = PatchDims(2, 4, 4, 2, 2)
    n = 2 * 4 * 4
    mat = np.zeros((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        mat[:, i] = npt_op1(Tensor(e.reshape(2, 4, 4)), dims).data.reshape(-1)
    pi = flat_permutation(dims)
    formula = np.zeros((n, n))
    formula[np.arange(n), pi] = 1.0
    r.check(np.array_equal(mat, formula),
            "op1 permutation matrix vs documented index map")
    full = np.zeros((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        out = npt_op3(npt_op2(npt_op1(Tensor(e.reshape(2, 4, 4)), dims), dims), dims)
        full[:, i] = out.data.reshape(-1)
    r.check(np.array_equal(full, np.eye(n)), "full chain permutation is identity")
    return r


def _suite_oracles() -> SuiteResult:
    r = SuiteResult("kernel_oracles")
    rng = np.random.default_rng(12)
    for case in range(10):
        n, cin, cout = 1 + case % 2, 4, 6
        groups = (1, 2, cin)[case % 3]
        co = cin if groups == cin else cout
        x = rng.standard_normal((n, cin, 7, 6)).astype(np.float32)
        w = rng.standard_normal((co, cin // groups, 3, 3)).astype(np.float32)
        b = rng.standard_normal(co).astype(np.float32)
        got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b),
                         stride=1 + case % 2, padding=case % 2, groups=groups)
        ref = oracles.conv2d_naive(x, w, b, 1 + case % 2, case % 2, groups)
        r.check(np.max(np.abs(got.data - ref)) < 1e-5, f"conv2d case {case}")
    for case in range(6):
        x = rng.standard_normal((1, 3, 4, 5)).astype(np.float32)
        w = rng.standard_normal((3, 4, 4, 4)).astype(np.float32)
        got = ops.conv_transpose2d(Tensor(x), Tensor(w), stride=2, padding=1)
        ref = oracles.conv_transpose2d_naive(x, w, None, 2, 1)
        r.check(np.max(np.abs(got.data - ref)) < 1e-5, f"deconv case {case}")
    for case in range(6):
        x = rng.standard_normal((3, 4, 5)).astype(np.float32)
        w = rng.standard_normal((7, 5)).astype(np.float32)
        b = rng.standard_normal(7).astype(np.float32)
        got = ops.linear(Tensor(x), Tensor(w), Tensor(b))
        r.check(np.max(np.abs(got.data - oracles.linear_naive(x, w, b))) < 1e-5,
                f"linear case {case}")
    for case in range(4):
        x = rng.standard_normal((2, 3, 6)).astype(np.float32)
        g = rng.standard_normal(6).astype(np.float32)
        be = rng.standard_normal(6).astype(np.float32)
        got = ops.layer_norm(Tensor(x), Tensor(g), Tensor(be))
        r.check(np.max(np.abs(got.data - oracles.layer_norm_naive(x, g, be))) < 1e-5,
                f"layer_norm case {case}")
    for case in range(4):
        x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
        g = rng.standard_normal(3).astype(np.float32)
        be = rng.standard_normal(3).astype(np.float32)
        rm = rng.standard_normal(3).astype(np.float32)
        rv = (0.5 + rng.random(3)).astype(np.float32)
        got = ops.batch_norm2d(Tensor(x), Tensor(g), Tensor(be),
                               rm.copy(), rv.copy(), training=bool(case % 2))
        ref = oracles.batch_norm2d_naive(x, g, be, rm, rv, training=bool(case % 2))
        r.check(np.max(np.abs(got.data - ref)) < 1e-5, f"batch_norm case {case}")
    return r


def _gradcheck(r: SuiteResult, label: str, fn, leaves: list[Tensor],
               rtol: float = 1e-4) -> None:
    """Compare reverse-mode and finite-difference gradients on each leaf."""
    with GradTape() as tape:
        loss = ops.tsum(fn())
    grads = backward(tape, loss)
    for i, leaf in enumerate(leaves):
        num = finite_diff_grad(lambda t, _i=i: _swap_eval(fn, leaves, _i, t), leaf)
        ana = grad_for(grads, leaf).astype(np.float64)
        scale = max(np.max(np.abs(num)), np.max(np.abs(ana)), 1e-8)
        ok = np.max(np.abs(ana - num)) / scale < rtol
        r.check(ok, f"{label} leaf {i}")


def _swap_eval(fn, leaves, idx, replacement):
    saved = leaves[idx].data
    leaves[idx].data = replacement.data.astype(saved.dtype)
    try:
        return fn()
    finally:
        leaves[idx].data = saved


def _suite_gradients() -> SuiteResult:
    r = SuiteResult("gradients")
    rng = np.random.default_rng(13)
    f64 = lambda *s: Tensor(rng.standard_normal(s), dtype=np.float64,
                            requires_grad=True)
    x = f64(1, 3, 5, 5)
    w = f64(4, 3, 3, 3)
    _gradcheck(r, "conv2d", lambda: ops.conv2d(x, w, padding=1), [x, w])
    xt = f64(1, 3, 3, 3)
    wt = f64(3, 2, 4, 4)
    _gradcheck(r, "conv_transpose2d",
               lambda: ops.conv_transpose2d(xt, wt, stride=2, padding=1), [xt, wt])
    xl = f64(4, 6)
    wl = f64(5, 6)
    _gradcheck(r, "linear", lambda: ops.linear(xl, wl), [xl, wl])
    xn = f64(3, 7)
    gn = f64(7)
    bn = f64(7)
    _gradcheck(r, "layer_norm", lambda: ops.gelu(ops.layer_norm(xn, gn, bn)),
               [xn, gn, bn])
    mp = MlpBlockParams.create(6, ratio=2, dtype=np.float64)
    mp.init(rng)
    xm = f64(4, 6)
    _gradcheck(r, "mlp_block", lambda: mlp_block(xm, mp),
               [xm, mp.w1, mp.b1, mp.w2, mp.gamma])
    lp = LarmParams.create(2, 4, 4, 2, 2, ratio=2, dtype=np.float64)
    lp.init(rng)
    xa = f64(2, 4, 4)
    _gradcheck(r, "larm", lambda: larm_forward(xa, lp),
               [xa, lp.inter_patch.w1, lp.intra_patch.w2])
    return r


def _suite_adjoint() -> SuiteResult:
    """<y, conv(x, w)> must equal <deconv(y, w), x> for every stride/pad.

    A conv weight (cout, cin, kh, kw) reads directly as a deconv weight
    (cin, cout, kh, kw), so the very same array is passed to both ops.
    Odd 7x7 inputs keep stride-2 windows exactly tiling, which makes the
    deconv output shape match the conv input shape.
    """
    r = SuiteResult("adjoint")
    rng = np.random.default_rng(14)
    for case in range(12):
        stride = 1 + case % 2
        pad = case % 2
        x = rng.standard_normal((1, 3, 7, 7)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        cx = ops.conv2d(Tensor(x), Tensor(w), stride=stride, padding=pad)
        y = rng.standard_normal(cx.shape).astype(np.float32)
        ty = ops.conv_transpose2d(Tensor(y), Tensor(w), stride=stride, padding=pad)
        lhs = float(np.sum(cx.data.astype(np.float64) * y.astype(np.float64)))
        rhs = float(np.sum(x.astype(np.float64) * ty.data.astype(np.float64)))
        r.check(abs(lhs - rhs) / max(abs(lhs), 1.0) < 1e-5, f"adjoint case {case}")
    return r


def _suite_costs() -> SuiteResult:
    r = SuiteResult("cost_accounting")
    from .model import ModelConfig, StageSpec  # local: avoid top clutter
    single = ModelConfig(
        input_size=(64, 48), keypoints=2, stem_channels=16,
        stages=(StageSpec(kind="mnv2", channels=16, stride=2, expansion=1),
                StageSpec(kind="mnv2", channels=16, stride=2, expansion=1),
                StageSpec(kind="mnv2", channels=16, stride=2, expansion=1),
                StageSpec(kind="deconv", channels=16),
                StageSpec(kind="deconv", channels=16),
                StageSpec(kind="head")))
    for cfg in (toy_config(), single):
        m = build_model(cfg)
        closed = sum(e.params for e in cost_table(cfg))
        r.check(count_params(m) == closed,
                f"closed-form params vs counter ({cfg.digest()})")
    ref = reference_config()
    m = build_model(ref)
    p = count_params(m)
    r.check(900_000 <= p <= 1_400_000, f"reference params {p} in window")
    r.check(p == sum(e.params for e in cost_table(ref)),
            "reference closed form equality")
    # hand examples: a 3x3 conv 16->32 with bias, and a linear 10->20
    r.check(16 * 32 * 9 + 32 == 4640, "conv closed form hand value")
    r.check(10 * 20 + 20 == 220, "linear closed form hand value")
    return r


def _suite_heatmap() -> SuiteResult:
    r = SuiteResult("heatmap_roundtrip")
    for sigma in (1, 2, 3):
        worst = 0.0
        for dy in np.linspace(-0.45, 0.45, 9):
            for dx in np.linspace(-0.45, 0.45, 9):
                kp = KeypointSet.of([[10.0 + dx, 8.0 + dy]])
                hm = gaussian_targets(kp, 24, 32, sigma)
                dec = decode_heatmaps(hm)
                err = np.max(np.abs(dec.coords[0] - kp.coords[0]))
                worst = max(worst, float(err))
        r.check(worst <= 0.5, f"round trip sigma={sigma} (worst {worst:.3f})")
    a = KeypointSet.of([[0.0, 0.0], [3.0, 4.0]])
    b = KeypointSet.of([[0.0, 3.0], [3.0, 0.0]])
    r.check(pckh(a, a, head_size=10.0) == 1.0, "pckh exact match")
    # errors are 3 and 4 pixels; threshold 0.5 * 7 = 3.5 splits them
    r.check(pckh(b, a, head_size=7.0) == 0.5, "pckh half within threshold")
    r.check(oks(a, a, area=10.0, k_consts=[0.5, 0.5]) == 1.0, "oks exact match")
    return r


_SUITES = {
    "npt_bijection": _suite_npt,
    "kernel_oracles": _suite_oracles,
    "gradients": _suite_gradients,
    "adjoint": _suite_adjoint,
    "cost_accounting": _suite_costs,
    "heatmap_roundtrip": _suite_heatmap,
}


def run_selftest(corrupt_npt: bool = False) -> SelftestReport:
    suites = []
    for name, fn in _SUITES.items():
        t0 = time.perf_counter()
        if name == "npt_bijection":
            res = fn(corrupt_npt)
        else:
            res = fn()
        res.duration_ms = (time.perf_counter() - t0) * 1e3
        suites.append(res)
    return SelftestReport(suites=suites)
