"""Image file loading and preprocessing for the inference path.

Two input formats, both dependency-free:

* binary PPM (P6, maxval <= 255), parsed here byte by byte;
* ``.npy`` holding a float32/float64 (3, H, W) array of values in [0, 1],
  the "raw tensor" escape hatch for hermetic tests.

Preprocessing is channel-first float in [0, 1], bilinear resize to the
model size (half-pixel centers; a same-size resize is an exact copy), then
(v - mean) / std per channel.
"""

from __future__ import annotations

import io

import numpy as np

from .errors import ImageFormatError
from .tensor import Tensor


def _read_ppm_token(fh) -> bytes:
    """Next whitespace-delimited token, skipping '#' comments."""
    tok = b""
    while True:
        ch = fh.read(1)
        if ch == b"":
            raise ImageFormatError("ppm: truncated header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch


def parse_ppm(blob: bytes) -> np.ndarray:
    """Decode binary PPM bytes to (3, H, W) float in [0, 1]."""
    fh = io.BytesIO(blob)
    if fh.read(2) != b"P6":
        raise ImageFormatError("ppm: not a P6 file")
    try:
        width = int(_read_ppm_token(fh))
        height = int(_read_ppm_token(fh))
        maxval = int(_read_ppm_token(fh))
    except ValueError as e:
        raise ImageFormatError(f"ppm: malformed header ({e})") from e
    if width < 1 or height < 1:
        raise ImageFormatError(f"ppm: bad dimensions {width}x{height}")
    if not (0 < maxval <= 255):
        raise ImageFormatError(f"ppm: unsupported maxval {maxval} "
                               "(only 8-bit supported)")
    need = width * height * 3
    raw = fh.read(need)
    if len(raw) != need:
        raise ImageFormatError(f"ppm: expected {need} pixel bytes, got {len(raw)}")
    hwc = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)
    return hwc.transpose(2, 0, 1).astype(np.float64) / maxval


def load_image_bytes(blob: bytes) -> np.ndarray:
    """Sniff the format from magic bytes; returns (3, H, W) float in [0, 1]."""
    if blob[:2] == b"P6":
        return parse_ppm(blob)
    if blob[:6] == b"\x93NUMPY":
        try:
            arr = np.load(io.BytesIO(blob), allow_pickle=False)
        except ValueError as e:
            raise ImageFormatError(f"npy: cannot parse ({e})") from e
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ImageFormatError(f"npy: expected a (3, H, W) array, got "
                                   f"{arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            raise ImageFormatError(f"npy: expected float values, got {arr.dtype}")
        return arr.astype(np.float64)
    raise ImageFormatError("unrecognized image format (want P6 ppm or .npy)")


def load_image(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise ImageFormatError(f"cannot read {path}: {e}") from e
    return load_image_bytes(blob)


def bilinear_resize(chw: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Per-channel bilinear resampling with half-pixel-aligned centers.
    Same-size calls return an exact copy (no resampling arithmetic)."""
    c, h, w = chw.shape
    if (h, w) == (out_h, out_w):
        return chw.copy()
    sy = h / out_h
    sx = w / out_w
    yy = np.clip((np.arange(out_h) + 0.5) * sy - 0.5, 0, h - 1)
    xx = np.clip((np.arange(out_w) + 0.5) * sx - 0.5, 0, w - 1)
    y0 = np.floor(yy).astype(int)
    x0 = np.floor(xx).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (yy - y0)[None, :, None]
    fx = (xx - x0)[None, None, :]
    a = chw[:, y0][:, :, x0]
    b = chw[:, y0][:, :, x1]
    cc = chw[:, y1][:, :, x0]
    d = chw[:, y1][:, :, x1]
    top = a * (1 - fx) + b * fx
    bot = cc * (1 - fx) + d * fx
    return top * (1 - fy) + bot * fy


def to_model_input(chw: np.ndarray, mean, std, dtype=np.float32) -> Tensor:
    """Normalize a [0, 1] channel-first image into a network input tensor."""
    mean = np.asarray(mean, dtype=np.float64)[:, None, None]
    std = np.asarray(std, dtype=np.float64)[:, None, None]
    return Tensor(((chw - mean) / std).astype(dtype))
