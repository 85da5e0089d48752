"""Adam, the learning-rate schedule, the procedural toy task, and the
latency benchmark report."""

import math

import numpy as np
import pytest

from lgmpose.bench import bench_run, summarize_times
from lgmpose.errors import ShapeError
from lgmpose.model import build_model, count_params, toy_config
from lgmpose.tensor import Tensor
from lgmpose.train import (AdamState, adam_step, lr_factor, make_toy_dataset,
                           train_toy)

_TOY64 = toy_config()


# ---------------------------------------------------------------------------
# optimizer


def _one_param(value=0.0):
    p = Tensor(np.array([value]))
    return [("theta", p)], p


def test_adam_first_step_hand_value():
    params, p = _one_param(0.0)
    state = AdamState.create(params, lr=1e-3)
    adam_step(params, {"theta": np.array([1.0])}, state)
    # bias correction makes the first update exactly -lr (up to eps)
    assert p.data[0] == pytest.approx(-1e-3, abs=1e-9)


def test_adam_zero_grad_is_noop():
    params, p = _one_param(1.5)
    state = AdamState.create(params, lr=1e-3)
    adam_step(params, {"theta": np.zeros(1)}, state)
    adam_step(params, {}, state)  # missing name counts as zero gradient
    assert p.data[0] == 1.5
    assert state.step == 2


def test_adam_converges_on_quadratic():
    params, p = _one_param(0.0)
    state = AdamState.create(params, lr=0.1)
    for _ in range(200):
        g = 2.0 * (p.data - 5.0)
        adam_step(params, {"theta": g}, state)
    assert abs(p.data[0] - 5.0) < 0.1


def test_adam_rejects_shape_mismatch():
    params, _ = _one_param()
    state = AdamState.create(params)
    with pytest.raises(ShapeError):
        adam_step(params, {"theta": np.zeros(2)}, state)


def test_lr_factor_boundaries():
    assert lr_factor(0, 200) == 1.0
    assert lr_factor(149, 200) == 1.0
    assert lr_factor(150, 200) == 0.1   # floor(0.75 * 200)
    assert lr_factor(179, 200) == 0.1
    assert lr_factor(180, 200) == 0.01  # floor(0.9 * 200)
    assert lr_factor(199, 200) == 0.01


# ---------------------------------------------------------------------------
# toy data


def test_toy_dataset_deterministic_and_in_range():
    a = make_toy_dataset(3, (32, 32), 4, seed=9)
    b = make_toy_dataset(3, (32, 32), 4, seed=9)
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.image, sb.image)
        assert np.array_equal(sa.keypoints, sb.keypoints)
    for s in a:
        assert s.image.shape == (3, 32, 32)
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        assert (s.keypoints >= 32 * 0.15 - 1e-9).all()
        assert (s.keypoints <= 32 * 0.85 + 1e-9).all()
    c = make_toy_dataset(3, (32, 32), 4, seed=10)
    assert not np.array_equal(a[0].image, c[0].image)


def test_toy_blobs_sit_at_keypoints():
    s = make_toy_dataset(1, (48, 48), 3, seed=2)[0]
    total = s.image.sum(axis=0)
    for kx, ky in s.keypoints:
        window = total[int(ky) - 2:int(ky) + 3, int(kx) - 2:int(kx) + 3]
        assert window.mean() > total.mean()


# ---------------------------------------------------------------------------
# toy training


def test_train_toy_is_bit_reproducible():
    a = train_toy(steps=4, seed=3, n_samples=2)
    b = train_toy(steps=4, seed=3, n_samples=2)
    assert a.losses == b.losses
    assert a.pckh == b.pckh
    assert a.frac_within_2cells == b.frac_within_2cells
    assert all(math.isfinite(v) for v in a.losses)
    assert a.config_digest == _TOY64.digest()
    assert a.heatmap_size == (16, 16)


def test_train_toy_seed_changes_trace():
    a = train_toy(steps=3, seed=1, n_samples=2)
    b = train_toy(steps=3, seed=2, n_samples=2)
    assert a.losses != b.losses


def test_train_toy_validates_arguments():
    with pytest.raises(ShapeError):
        train_toy(steps=0)
    with pytest.raises(ShapeError):
        train_toy(steps=1, n_samples=0)


def test_train_toy_to_dict_exposes_endpoints():
    r = train_toy(steps=2, seed=0, n_samples=2)
    d = r.to_dict()
    assert d["initial_loss"] == r.losses[0]
    assert d["final_loss"] == r.losses[-1]
    assert d["steps"] == 2
    assert len(d["losses"]) == 2


def test_long_run_loss_decays_without_divergence(long_toy_run):
    losses = long_toy_run[0].losses
    assert len(losses) == 200
    # no 50-step window may end higher than it started
    for t in range(len(losses) - 50):
        assert losses[t + 50] <= losses[t], f"window at {t} rose"
    assert losses[-1] < losses[0]


def test_long_run_localizes_keypoints(long_toy_run):
    result, _ = long_toy_run
    assert result.frac_within_2cells >= 0.9
    assert result.pckh is not None and result.pckh >= 0.9


# ---------------------------------------------------------------------------
# benchmark


def test_summarize_times_values():
    mean, p50, p95, fps = summarize_times([10.0, 20.0, 30.0, 40.0])
    assert mean == 25.0
    assert p50 == 25.0
    assert p95 == pytest.approx(38.5)  # linear interpolation
    assert fps == pytest.approx(1000.0 / 25.0)


def test_bench_report_is_recomputable():
    report = bench_run(_TOY64, warmup=1, iters=4, seed=0)
    assert len(report.times_ms) == 4
    assert len(report.decode_times_ms) == 4
    mean, p50, p95, fps = summarize_times(report.times_ms)
    assert report.mean_ms == mean
    assert report.p50_ms == p50
    assert report.p95_ms == p95
    assert report.fps == fps
    assert report.fps == pytest.approx(1000.0 / report.mean_ms)
    assert report.decode_mean_ms == pytest.approx(
        float(np.mean(report.decode_times_ms)))
    assert report.params == count_params(build_model(_TOY64))
    assert report.config_digest == _TOY64.digest()


def test_bench_single_iteration_degenerates_cleanly():
    report = bench_run(_TOY64, warmup=0, iters=1, seed=1)
    assert report.p50_ms == report.mean_ms == report.times_ms[0]


def test_bench_input_size_override():
    report = bench_run(_TOY64, input_size=(128, 128), warmup=0, iters=1)
    assert report.input_size == (128, 128)
    assert report.config_digest == _TOY64.with_input_size(128, 128).digest()


def test_bench_validates_arguments():
    with pytest.raises(ShapeError):
        bench_run(_TOY64, iters=0)
    with pytest.raises(ShapeError):
        bench_run(_TOY64, warmup=-1)


def test_bench_report_to_dict_is_json_shaped():
    d = bench_run(_TOY64, warmup=0, iters=1).to_dict()
    assert d["input_size"] == [64, 64]
    assert isinstance(d["times_ms"], list)
