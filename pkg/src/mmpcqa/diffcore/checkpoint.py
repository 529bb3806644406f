"""Bit-exact binary checkpoint format.

Layout: magic "MMPCQA1\\0", u32 tensor count, then per tensor
u16 name length, UTF-8 name, u8 rank, u32 per dimension, float32
little-endian payload; Adam moments live under "<name>.m"/"<name>.v";
u64 optimizer step count at the tail.
"""

import io
import struct

import numpy as np

from .params import ParameterStore

MAGIC = b"MMPCQA1\x00"


class CheckpointError(ValueError):
    pass


def _write_tensor(buf, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    buf.write(struct.pack("<H", len(nb)))
    buf.write(nb)
    buf.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        buf.write(struct.pack("<I", dim))
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def save_bytes(store: ParameterStore) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    names = store.names()
    buf.write(struct.pack("<I", 3 * len(names)))
    for name in names:
        e = store.entry(name)
        _write_tensor(buf, name, e.value)
        _write_tensor(buf, name + ".m", e.m)
        _write_tensor(buf, name + ".v", e.v)
    buf.write(struct.pack("<Q", store.step))
    return buf.getvalue()


def save(store: ParameterStore, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_bytes(store))


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(data)}")
    return data


def load_bytes(data: bytes, dtype=np.float32) -> ParameterStore:
    fh = io.BytesIO(data)
    if _read_exact(fh, len(MAGIC)) != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    tensors: dict[str, np.ndarray] = {}
    order: list[str] = []
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", _read_exact(fh, 1))
        shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(rank))
        n_items = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(_read_exact(fh, 4 * n_items), dtype="<f4").reshape(shape)
        tensors[name] = arr
        order.append(name)
    (step,) = struct.unpack("<Q", _read_exact(fh, 8))

    store = ParameterStore(dtype)
    for name in order:
        if name.endswith(".m") or name.endswith(".v"):
            continue
        store.add(name, tensors[name])
        e = store.entry(name)
        if name + ".m" in tensors:
            e.m[:] = tensors[name + ".m"]
        if name + ".v" in tensors:
            e.v[:] = tensors[name + ".v"]
    store.step = step
    return store


def load(path, dtype=np.float32) -> ParameterStore:
    with open(path, "rb") as fh:
        return load_bytes(fh.read(), dtype=dtype)
