"""Weight file format: byte-exact round trips and hostile-input handling."""

import numpy as np
import pytest

from lgmpose.errors import (WeightFileError, WeightMagicError,
                            WeightMismatchError, WeightTruncatedError,
                            WeightVersionError)
from lgmpose.model import build_model, init_weights, toy_config
from lgmpose.tensor import Tensor
from lgmpose.weights import (apply_entries, load_weight_file, load_weights,
                             load_weights_from_bytes, parse_entries,
                             save_weights, serialize_entries, serialize_model)


def _toy(seed):
    return init_weights(build_model(toy_config()), seed=seed)


def test_entry_roundtrip_is_bitwise():
    rng = np.random.default_rng(1)
    entries = [("a.w", rng.standard_normal((3, 4)).astype(np.float32)),
               ("b", rng.standard_normal(7).astype(np.float32)),
               ("scalar", np.float32(2.5).reshape(()))]
    back = parse_entries(serialize_entries(entries))
    assert [n for n, _ in back] == ["a.w", "b", "scalar"]
    for (_, want), (_, got) in zip(entries, back):
        assert got.dtype == np.float32
        assert np.array_equal(got, np.asarray(want))


def test_model_roundtrip_preserves_forward(tmp_path):
    path = str(tmp_path / "m.lgmw")
    src = _toy(seed=3)
    save_weights(src, path)
    dst = _toy(seed=9)
    x = Tensor(np.random.default_rng(0).standard_normal((3, 64, 64))
               .astype(np.float32))
    assert not np.array_equal(dst.forward(x).data, src.forward(x).data)
    load_weights(dst, path)
    assert np.array_equal(dst.forward(x).data, src.forward(x).data)
    assert serialize_model(dst) == serialize_model(src)


def test_bytes_and_file_paths_agree(tmp_path):
    src = _toy(seed=5)
    path = str(tmp_path / "m.lgmw")
    save_weights(src, path)
    with open(path, "rb") as fh:
        assert fh.read() == serialize_model(src)
    dst = _toy(seed=6)
    load_weights_from_bytes(dst, serialize_model(src))
    assert serialize_model(dst) == serialize_model(src)


def test_bad_magic():
    blob = bytearray(serialize_model(_toy(0)))
    blob[:4] = b"XXXX"
    with pytest.raises(WeightMagicError):
        parse_entries(bytes(blob))


def test_bad_version():
    blob = bytearray(serialize_model(_toy(0)))
    blob[4] = 2  # version u32 little-endian starts right after the magic
    with pytest.raises(WeightVersionError):
        parse_entries(bytes(blob))


def test_truncated_payload():
    blob = serialize_model(_toy(0))
    with pytest.raises(WeightTruncatedError):
        parse_entries(blob[:-3])
    with pytest.raises(WeightTruncatedError):
        parse_entries(blob[:6])


def test_trailing_bytes_rejected():
    blob = serialize_model(_toy(0))
    with pytest.raises(WeightFileError, match="trailing"):
        parse_entries(blob + b"\x00")


def test_duplicate_names_rejected_both_ways():
    arr = np.zeros(2, dtype=np.float32)
    with pytest.raises(WeightFileError, match="duplicate"):
        serialize_entries([("t", arr), ("t", arr)])
    blob = serialize_entries([("ta", arr), ("tb", arr)])
    with pytest.raises(WeightFileError, match="duplicate"):
        parse_entries(blob.replace(b"tb", b"ta"))


def test_mismatch_is_atomic_and_lists_problems():
    model = _toy(seed=1)
    before = serialize_model(model)
    entries = parse_entries(before)
    renamed = [("not.a.tensor" if n == entries[0][0] else n, a)
               for n, a in entries]
    with pytest.raises(WeightMismatchError) as exc:
        apply_entries(model, renamed)
    assert "not.a.tensor" in str(exc.value)
    assert entries[0][0] in str(exc.value)
    assert serialize_model(model) == before  # untouched after the failure


def test_shape_conflict_reported():
    model = _toy(seed=1)
    entries = parse_entries(serialize_model(model))
    name0 = entries[0][0]
    entries[0] = (name0, np.zeros((1, 1), dtype=np.float32))
    with pytest.raises(WeightMismatchError, match="shape conflict"):
        apply_entries(model, entries)


def test_extra_tensor_reported(tmp_path):
    model = _toy(seed=1)
    entries = parse_entries(serialize_model(model))
    entries.append(("phantom", np.zeros(3, dtype=np.float32)))
    with pytest.raises(WeightMismatchError, match="not in model"):
        apply_entries(model, entries)


def test_file_includes_norm_buffers():
    names = [n for n, _ in parse_entries(serialize_model(_toy(0)))]
    assert any(n.endswith("running_mean") for n in names)
    assert any(n.endswith("running_var") for n in names)
    assert len(names) == len(set(names))


def test_load_weight_file_missing(tmp_path):
    with pytest.raises(OSError):
        load_weight_file(str(tmp_path / "nope.lgmw"))
