"""Heatmap target generation, sub-pixel decoding, and keypoint metrics.

Conventions, frozen here and relied on by tests:

* Targets are unnormalized Gaussians written into a (6*sigma+1)^2 window
  centered on the keypoint rounded to the nearest cell, so the peak cell
  is exactly 1.  Keypoints whose rounded center falls outside the map, and
  invisible keypoints, produce an all-zero channel.
* Decoding is argmax (ties to the smaller flat index) plus a quarter-cell
  shift toward the strictly greater of the two axis neighbors, applied
  independently per axis and only for interior maxima.
* Metrics are means over the ground truth's visible keypoints and return
  None when nothing is visible (undefined, never silently 0).

Coordinates are (x, y) in cell units throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


@dataclass
class KeypointSet:
    coords: np.ndarray   # (K, 2) float, (x, y)
    scores: np.ndarray   # (K,) float
    visible: np.ndarray  # (K,) bool

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 2)
        k = self.coords.shape[0]
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(k)
        self.visible = np.asarray(self.visible, dtype=bool).reshape(k)

    def __len__(self) -> int:
        return self.coords.shape[0]

    @classmethod
    def of(cls, coords, visible=None) -> "KeypointSet":
        coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
        k = coords.shape[0]
        vis = np.ones(k, bool) if visible is None else np.asarray(visible, bool)
        return cls(coords=coords, scores=np.ones(k), visible=vis)


def gaussian_targets(kps: KeypointSet, heat_h: int, heat_w: int,
                     sigma: float, dtype=np.float32) -> Tensor:
    """One Gaussian peak per keypoint channel; see module conventions."""
    if sigma <= 0:
        raise ShapeError(f"gaussian_targets: sigma must be positive, got {sigma}")
    k = len(kps)
    out = np.zeros((k, heat_h, heat_w), dtype=np.float64)
    r = int(round(3 * sigma))
    ax = np.arange(-r, r + 1, dtype=np.float64)
    window = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma ** 2))
    for i in range(k):
        if not kps.visible[i]:
            continue
        cx = int(round(kps.coords[i, 0]))
        cy = int(round(kps.coords[i, 1]))
        if not (0 <= cx < heat_w and 0 <= cy < heat_h):
            continue
        y0, y1 = max(0, cy - r), min(heat_h, cy + r + 1)
        x0, x1 = max(0, cx - r), min(heat_w, cx + r + 1)
        out[i, y0:y1, x0:x1] = window[y0 - cy + r:y1 - cy + r,
                                      x0 - cx + r:x1 - cx + r]
    return Tensor(out.astype(dtype))


def decode_heatmaps(hm) -> KeypointSet:
    """Argmax plus quarter-offset refinement, per channel."""
    arr = hm.data if isinstance(hm, Tensor) else np.asarray(hm)
    if arr.ndim != 3:
        raise ShapeError(f"decode_heatmaps: expected (K, H, W), got {arr.shape}")
    k, h, w = arr.shape
    coords = np.zeros((k, 2), dtype=np.float64)
    scores = np.zeros(k, dtype=np.float64)
    for i in range(k):
        ch = arr[i]
        flat = int(np.argmax(ch))
        y, x = divmod(flat, w)
        fx, fy = float(x), float(y)
        if 0 < x < w - 1:
            if ch[y, x + 1] > ch[y, x - 1]:
                fx += 0.25
            elif ch[y, x + 1] < ch[y, x - 1]:
                fx -= 0.25
        if 0 < y < h - 1:
            if ch[y + 1, x] > ch[y - 1, x]:
                fy += 0.25
            elif ch[y + 1, x] < ch[y - 1, x]:
                fy -= 0.25
        coords[i] = (fx, fy)
        scores[i] = ch[y, x]
    return KeypointSet(coords=coords, scores=scores, visible=np.ones(k, bool))


def _check_pair(pred: KeypointSet, gt: KeypointSet, what: str) -> None:
    if len(pred) != len(gt):
        raise ShapeError(f"{what}: keypoint counts differ "
                         f"({len(pred)} vs {len(gt)})")


def pckh(pred: KeypointSet, gt: KeypointSet, head_size: float,
         alpha: float = 0.5):
    """Fraction of visible keypoints with error <= alpha * head_size
    (inclusive boundary); None when no keypoint is visible."""
    _check_pair(pred, gt, "pckh")
    if head_size <= 0:
        raise ShapeError(f"pckh: head_size must be positive, got {head_size}")
    vis = gt.visible
    if not vis.any():
        return None
    d = np.linalg.norm(pred.coords[vis] - gt.coords[vis], axis=1)
    return float(np.mean(d <= alpha * head_size))


def oks(pred: KeypointSet, gt: KeypointSet, area: float, k_consts):
    """Mean over visible keypoints of exp(-d_i^2 / (2 * area * k_i^2));
    None when no keypoint is visible."""
    _check_pair(pred, gt, "oks")
    if area <= 0:
        raise ShapeError(f"oks: area must be positive, got {area}")
    kc = np.asarray(k_consts, dtype=np.float64)
    if kc.shape != (len(gt),) or (kc <= 0).any():
        raise ShapeError(f"oks: need {len(gt)} positive constants, got shape "
                         f"{kc.shape}")
    vis = gt.visible
    if not vis.any():
        return None
    d2 = np.sum((pred.coords[vis] - gt.coords[vis]) ** 2, axis=1)
    return float(np.mean(np.exp(-d2 / (2.0 * area * kc[vis] ** 2))))


def coco_k_constants() -> np.ndarray:
    """The 17 COCO per-keypoint falloff constants (2x the annotation sigmas)."""
    text = resources.files("lgmpose.data").joinpath("coco_oks_k.json").read_text()
    return np.asarray(json.loads(text), dtype=np.float64)


# ---------------------------------------------------------------------------
# Ground-truth JSON I/O


def keypoints_to_record(image: str, kps: KeypointSet, head_size=None,
                        area=None) -> dict:
    rec = {"image": image,
           "keypoints": [[float(x), float(y), int(v)]
                         for (x, y), v in zip(kps.coords, kps.visible)]}
    if head_size is not None:
        rec["head_size"] = float(head_size)
    if area is not None:
        rec["area"] = float(area)
    return rec


def record_to_keypoints(rec: dict) -> tuple[str, KeypointSet]:
    if not isinstance(rec, dict) or "keypoints" not in rec:
        raise ShapeError("keypoint record must be an object with a "
                         "'keypoints' list")
    kp = rec["keypoints"]
    coords = np.array([[p[0], p[1]] for p in kp], dtype=np.float64)
    vis = np.array([bool(p[2]) for p in kp])
    return rec.get("image", ""), KeypointSet(coords=coords,
                                             scores=np.ones(len(kp)),
                                             visible=vis)


def load_keypoint_file(path: str) -> list[dict]:
    with open(path, "rb") as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list):
        raise ShapeError("keypoint file must hold a record or list of records")
    return data


def save_keypoint_file(records: list[dict], path: str) -> None:
    with open(path, "w") as fh:
        json.dump(records, fh, indent=2)
        fh.write("\n")
