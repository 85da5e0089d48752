"""PPM/npy decoding, bilinear resampling, and input normalization."""

import io

import numpy as np
import pytest

from lgmpose.errors import ImageFormatError
from lgmpose.imageio import (bilinear_resize, load_image, load_image_bytes,
                             parse_ppm, to_model_input)


def _ppm(w, h, pixels, maxval=255, header_extra=""):
    head = f"P6{header_extra}\n{w} {h}\n{maxval}\n".encode()
    return head + bytes(pixels)


def test_ppm_2x2_hand_decoded():
    pixels = [255, 0, 0,  0, 255, 0,
              0, 0, 255,  255, 255, 255]
    img = parse_ppm(_ppm(2, 2, pixels))
    assert img.shape == (3, 2, 2)
    assert np.array_equal(img[0], [[1.0, 0.0], [0.0, 1.0]])  # red channel
    assert np.array_equal(img[1], [[0.0, 1.0], [0.0, 1.0]])
    assert np.array_equal(img[2], [[0.0, 0.0], [1.0, 1.0]])


def test_ppm_maxval_scaling():
    img = parse_ppm(_ppm(1, 1, [50, 100, 0], maxval=100))
    assert np.array_equal(img.reshape(3), [0.5, 1.0, 0.0])


def test_ppm_header_comments_skipped():
    blob = b"P6\n# made by hand\n2 1\n# another\n255\n" + bytes(6)
    assert parse_ppm(blob).shape == (3, 1, 2)


@pytest.mark.parametrize("blob,fragment", [
    (b"P5\n1 1\n255\n\x00", "P6"),
    (_ppm(2, 2, [0] * 11), "pixel bytes"),
    (b"P6\n2 x\n255\n" + bytes(12), "header"),
    (_ppm(1, 1, [0, 0, 0, 0], maxval=65535)[:-1], "maxval"),
    (b"P6\n0 2\n255\n", "dimensions"),
    (b"P6\n2 2", "truncated"),
])
def test_ppm_rejects_malformed(blob, fragment):
    with pytest.raises(ImageFormatError, match=fragment):
        parse_ppm(blob)


def test_npy_roundtrip():
    arr = np.random.default_rng(3).random((3, 5, 4)).astype(np.float32)
    buf = io.BytesIO()
    np.save(buf, arr)
    back = load_image_bytes(buf.getvalue())
    assert back.dtype == np.float64
    assert np.array_equal(back, arr.astype(np.float64))


def test_npy_shape_and_dtype_policed():
    buf = io.BytesIO()
    np.save(buf, np.zeros((4, 4), dtype=np.float32))
    with pytest.raises(ImageFormatError, match="3, H, W"):
        load_image_bytes(buf.getvalue())
    buf = io.BytesIO()
    np.save(buf, np.zeros((3, 2, 2), dtype=np.int32))
    with pytest.raises(ImageFormatError, match="float"):
        load_image_bytes(buf.getvalue())


def test_unknown_magic_rejected():
    with pytest.raises(ImageFormatError, match="unrecognized"):
        load_image_bytes(b"GIF89a...")


def test_load_image_missing_file(tmp_path):
    with pytest.raises(ImageFormatError, match="cannot read"):
        load_image(str(tmp_path / "absent.ppm"))


def test_resize_same_size_is_exact_copy():
    img = np.random.default_rng(5).random((3, 6, 7))
    out = bilinear_resize(img, 6, 7)
    assert np.array_equal(out, img)
    assert out is not img


def test_resize_constant_stays_constant():
    img = np.full((3, 1, 1), 0.7)
    assert np.allclose(bilinear_resize(img, 4, 5), 0.7)


def test_resize_1d_ramp_hand_values():
    img = np.array([[[0.0, 1.0]]])  # (1, 1, 2)
    out = bilinear_resize(img, 1, 4)
    # half-pixel centers: sample points land at -0.25, 0.25, 0.75, 1.25,
    # clipped to the ramp's support
    assert np.allclose(out.reshape(4), [0.0, 0.25, 0.75, 1.0])


def test_to_model_input_normalizes():
    chw = np.full((3, 2, 2), 0.5)
    t = to_model_input(chw, mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5))
    assert t.dtype == np.float32
    assert (t.data == 0).all()
    t2 = to_model_input(np.ones((3, 1, 1)), (0.5, 0.5, 0.5), (0.5, 0.5, 0.5))
    assert (t2.data == 1.0).all()
