"""Gaussian targets, sub-pixel decoding, and the two keypoint metrics."""

import json

import numpy as np
import pytest

from lgmpose.errors import ShapeError
from lgmpose.heatmap import (KeypointSet, coco_k_constants, decode_heatmaps,
                             gaussian_targets, keypoints_to_record,
                             load_keypoint_file, oks, pckh,
                             record_to_keypoints, save_keypoint_file)


def _set(coords, visible=None):
    return KeypointSet.of(coords, visible)


# ---------------------------------------------------------------------------
# targets


def test_target_peak_is_exactly_one():
    hm = gaussian_targets(_set([(5, 7)]), 16, 16, sigma=2.0).data
    assert hm[0, 7, 5] == 1.0
    assert hm.max() == 1.0


def test_target_falloff_value():
    for sigma in (1.0, 2.0):
        hm = gaussian_targets(_set([(8, 8)]), 17, 17, sigma).data
        d = int(sigma)
        assert hm[0, 8, 8 + d] == pytest.approx(np.exp(-0.5), abs=1e-6)


def test_target_window_is_truncated():
    hm = gaussian_targets(_set([(8, 8)]), 17, 17, sigma=1.0).data
    assert hm[0, 8, 12] == 0.0      # distance 4 > 3*sigma window radius
    assert hm[0, 8, 11] > 0.0       # distance 3 is the window edge


def test_invisible_and_outside_keypoints_are_blank():
    kps = KeypointSet.of([(2, 2), (40, 2), (2, -3)], visible=[False, True, True])
    hm = gaussian_targets(kps, 8, 8, sigma=1.0).data
    assert (hm[0] == 0).all()   # invisible
    assert (hm[1] == 0).all()   # rounds outside the map
    assert (hm[2] == 0).all()


def test_target_center_rounds_to_nearest_cell():
    hm = gaussian_targets(_set([(3.4, 5.6)]), 12, 12, sigma=1.0).data
    assert hm[0, 6, 3] == 1.0


def test_sigma_must_be_positive():
    with pytest.raises(ShapeError):
        gaussian_targets(_set([(1, 1)]), 8, 8, sigma=0.0)


# ---------------------------------------------------------------------------
# decoding


def test_decode_isolated_peak_has_no_shift():
    hm = np.zeros((1, 20, 16))
    hm[0, 7, 10] = 1.0
    kps = decode_heatmaps(hm)
    assert tuple(kps.coords[0]) == (10.0, 7.0)
    assert kps.scores[0] == 1.0


def test_decode_quarter_shift_toward_greater_neighbor():
    hm = np.zeros((1, 20, 16))
    hm[0, 7, 10] = 1.0
    hm[0, 7, 11] = 0.5
    assert tuple(decode_heatmaps(hm).coords[0]) == (10.25, 7.0)
    hm[0, 7, 11] = 0.0
    hm[0, 6, 10] = 0.25
    assert tuple(decode_heatmaps(hm).coords[0]) == (10.0, 6.75)


def test_decode_tie_takes_smaller_flat_index():
    hm = np.zeros((1, 8, 8))
    hm[0, 2, 3] = 1.0
    hm[0, 5, 6] = 1.0
    # equal maxima: the earlier flat index wins; its neighbors are zero,
    # so no sub-cell shift either
    assert tuple(decode_heatmaps(hm).coords[0]) == (3.0, 2.0)


def test_decode_border_peak_skips_refinement():
    hm = np.zeros((1, 6, 6))
    hm[0, 0, 5] = 1.0
    hm[0, 1, 5] = 0.5   # would pull y, but the peak is on the border
    assert tuple(decode_heatmaps(hm).coords[0]) == (5.0, 0.0)


def test_decode_rejects_wrong_rank():
    with pytest.raises(ShapeError):
        decode_heatmaps(np.zeros((4, 4)))


def test_encode_decode_within_half_cell():
    # windows are centered on the rounded cell, so the recoverable error
    # bound is per axis, not Euclidean
    rng = np.random.default_rng(31)
    for sigma in (1.0, 2.0):
        pts = np.stack([rng.uniform(4, 11, 8), rng.uniform(4, 11, 8)], axis=1)
        kps = _set(pts)
        dec = decode_heatmaps(gaussian_targets(kps, 16, 16, sigma))
        err = np.max(np.abs(dec.coords - kps.coords), axis=1)
        assert (err <= 0.5 + 1e-9).all()


# ---------------------------------------------------------------------------
# metrics


def test_pckh_hand_case():
    pred = _set([(4.0, 0.0), (0.0, 6.0)])
    gt = _set([(0.0, 0.0), (0.0, 0.0)])
    # errors {4, 6}, threshold 0.5 * 10 = 5 -> one in, one out
    assert pckh(pred, gt, head_size=10.0) == 0.5


def test_pckh_boundary_is_inclusive():
    pred = _set([(5.0, 0.0)])
    gt = _set([(0.0, 0.0)])
    assert pckh(pred, gt, head_size=10.0) == 1.0


def test_pckh_ignores_invisible_and_handles_empty():
    pred = _set([(100.0, 100.0), (1.0, 0.0)])
    gt = KeypointSet.of([(0.0, 0.0), (0.0, 0.0)], visible=[False, True])
    assert pckh(pred, gt, head_size=10.0) == 1.0
    gt_none = KeypointSet.of([(0.0, 0.0)], visible=[False])
    assert pckh(_set([(0.0, 0.0)]), gt_none, head_size=10.0) is None


def test_pckh_translation_invariance():
    rng = np.random.default_rng(37)
    p = rng.uniform(0, 20, (5, 2))
    g = rng.uniform(0, 20, (5, 2))
    shift = np.array([13.0, -4.5])
    a = pckh(_set(p), _set(g), head_size=6.0)
    b = pckh(_set(p + shift), _set(g + shift), head_size=6.0)
    assert a == b


def test_pckh_validation():
    with pytest.raises(ShapeError):
        pckh(_set([(0, 0)]), _set([(0, 0), (1, 1)]), head_size=1.0)
    with pytest.raises(ShapeError):
        pckh(_set([(0, 0)]), _set([(0, 0)]), head_size=0.0)


def test_oks_hand_cases():
    gt = _set([(0.0, 0.0)])
    assert oks(gt, gt, area=100.0, k_consts=[0.5]) == 1.0
    # d^2 = 2 * area * k^2  ->  exp(-1)
    area, k = 50.0, 0.8
    d = np.sqrt(2 * area * k * k)
    pred = _set([(d, 0.0)])
    assert oks(pred, gt, area=area, k_consts=[k]) == pytest.approx(
        np.exp(-1.0), abs=1e-12)


def test_oks_scale_identity():
    # doubling every distance while quadrupling the area leaves oks fixed
    rng = np.random.default_rng(41)
    g = rng.uniform(0, 10, (4, 2))
    p = g + rng.standard_normal((4, 2))
    k = [0.5, 0.8, 1.0, 0.3]
    a = oks(_set(p), _set(g), area=25.0, k_consts=k)
    b = oks(_set(2 * p), _set(2 * g), area=100.0, k_consts=k)
    assert a == pytest.approx(b, abs=1e-12)


def test_oks_none_when_nothing_visible():
    gt = KeypointSet.of([(0, 0)], visible=[False])
    assert oks(_set([(0, 0)]), gt, area=1.0, k_consts=[0.5]) is None


def test_oks_validation():
    with pytest.raises(ShapeError):
        oks(_set([(0, 0)]), _set([(0, 0)]), area=0.0, k_consts=[0.5])
    with pytest.raises(ShapeError):
        oks(_set([(0, 0)]), _set([(0, 0)]), area=1.0, k_consts=[0.5, 0.5])
    with pytest.raises(ShapeError):
        oks(_set([(0, 0)]), _set([(0, 0)]), area=1.0, k_consts=[-0.5])


def test_coco_constants():
    k = coco_k_constants()
    assert k.shape == (17,)
    assert (k > 0).all()
    assert k[1] == pytest.approx(0.05)  # eyes
    assert k[0] == pytest.approx(0.052)  # nose


# ---------------------------------------------------------------------------
# record I/O


def test_record_roundtrip(tmp_path):
    kps = KeypointSet.of([(1.5, 2.5), (3.0, 4.0)], visible=[True, False])
    rec = keypoints_to_record("img.ppm", kps, head_size=7.0, area=42.0)
    name, back = record_to_keypoints(rec)
    assert name == "img.ppm"
    assert np.array_equal(back.coords, kps.coords)
    assert np.array_equal(back.visible, kps.visible)
    path = str(tmp_path / "kp.json")
    save_keypoint_file([rec], path)
    loaded = load_keypoint_file(path)
    assert loaded == [json.loads(json.dumps(rec))]


def test_record_validation():
    with pytest.raises(ShapeError):
        record_to_keypoints({"image": "x.ppm"})
    with pytest.raises(ShapeError):
        record_to_keypoints([1, 2, 3])
