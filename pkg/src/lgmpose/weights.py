"""Binary weight files.

Layout (all integers little-endian)::

    magic "LGMW" (4 bytes)
    format version  u32        (currently 1)
    tensor count    u32
    then per tensor:
      name length   u16
      name          UTF-8 bytes
      ndim          u8
      dims          u32 * ndim
      payload       f32 * prod(dims), C order

Payloads are float32 regardless of the in-memory dtype, so save/load of an
f32 model round-trips byte for byte.  Loading validates the whole file and
the name/shape match against the target model before touching any tensor,
so a failed load leaves the model exactly as it was.
"""

from __future__ import annotations

import struct
from typing import Iterable

import numpy as np

from .errors import (WeightFileError, WeightMagicError, WeightMismatchError,
                     WeightTruncatedError, WeightVersionError)

MAGIC = b"LGMW"
VERSION = 1


def serialize_entries(entries: Iterable[tuple[str, np.ndarray]]) -> bytes:
    entries = list(entries)
    seen = set()
    for name, _ in entries:
        if name in seen:
            raise WeightFileError(f"duplicate tensor name {name!r}")
        seen.add(name)
    parts = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise WeightFileError(f"tensor name too long: {name[:40]}...")
        # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d,
        # and tobytes() below emits C order for any layout anyway
        a = np.asarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


def save_weight_file(entries: Iterable[tuple[str, np.ndarray]], path: str) -> None:
    blob = serialize_entries(entries)
    with open(path, "wb") as fh:
        fh.write(blob)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise WeightTruncatedError(
                f"file ends inside {what} (need {n} bytes at offset {self.pos}, "
                f"have {len(self.blob) - self.pos})")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out


def parse_entries(blob: bytes) -> list[tuple[str, np.ndarray]]:
    r = _Reader(blob)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise WeightMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, count = struct.unpack("<II", r.take(8, "header"))
    if version != VERSION:
        raise WeightVersionError(f"unsupported format version {version}, "
                                 f"this build reads {VERSION}")
    entries = []
    seen = set()
    for i in range(count):
        (name_len,) = struct.unpack("<H", r.take(2, f"tensor {i} name length"))
        name = r.take(name_len, f"tensor {i} name").decode("utf-8")
        (ndim,) = struct.unpack("<B", r.take(1, f"{name}: ndim"))
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"{name}: dims"))
        n_items = 1
        for d in dims:
            n_items *= d
        payload = r.take(4 * n_items, f"{name}: payload")
        if name in seen:
            raise WeightFileError(f"duplicate tensor name {name!r} in file")
        seen.add(name)
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        entries.append((name, arr))
    if r.pos != len(blob):
        raise WeightFileError(f"{len(blob) - r.pos} trailing bytes after the "
                              f"declared {count} tensors")
    return entries


def load_weight_file(path: str) -> list[tuple[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    return parse_entries(blob)


def model_entries(model) -> list[tuple[str, np.ndarray]]:
    """Every parameter and normalization buffer, in model walk order."""
    out = [(name, t.data) for name, t in model.named_params()]
    out.extend((name, buf) for name, buf in model.named_buffers())
    return out


def serialize_model(model) -> bytes:
    return serialize_entries(model_entries(model))


def save_weights(model, path: str) -> None:
    save_weight_file(model_entries(model), path)


def apply_entries(model, entries: list[tuple[str, np.ndarray]]) -> None:
    """Install parsed entries; all-or-nothing with a full mismatch list."""
    loaded = dict(entries)
    expected = {name: arr for name, arr in model_entries(model)}
    problems = []
    for name in sorted(set(expected) - set(loaded)):
        problems.append(f"missing from file: {name} {expected[name].shape}")
    for name in sorted(set(loaded) - set(expected)):
        problems.append(f"not in model: {name} {loaded[name].shape}")
    for name in sorted(set(loaded) & set(expected)):
        if loaded[name].shape != expected[name].shape:
            problems.append(f"shape conflict: {name} is {expected[name].shape} "
                            f"in the model, {loaded[name].shape} in the file")
    if problems:
        raise WeightMismatchError(
            f"weight file does not fit the model ({len(problems)} problems):\n  "
            + "\n  ".join(problems))
    params = dict(model.named_params())
    buffers = dict(model.named_buffers())
    for name, arr in loaded.items():
        if name in params:
            params[name].assign_(arr)
        else:
            buffers[name][...] = arr


def load_weights(model, path: str) -> None:
    apply_entries(model, load_weight_file(path))


def load_weights_from_bytes(model, blob: bytes) -> None:
    apply_entries(model, parse_entries(blob))
