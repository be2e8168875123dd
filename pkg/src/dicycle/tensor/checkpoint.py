"""Binary checkpoint format for named float64 arrays.

Layout (all integers little-endian)::

    magic   8 bytes   b"DICYCKPT"
    version uint32
    count   uint32
    count x entry:
        name_len uint32, name utf-8 bytes
        rank     uint32
        extents  rank x uint64
        payload  prod(extents) x float64 (row-major)

Entries are written in sorted name order so identical parameters produce
byte-identical files.
"""

from __future__ import annotations

import io
import os
import struct
from typing import Mapping, Union

import numpy as np

from ..errors import ContractError, DataError
from .tensor import Tensor

MAGIC = b"DICYCKPT"
VERSION = 1

PathLike = Union[str, os.PathLike]


def _as_array(value) -> np.ndarray:
    if isinstance(value, Tensor):
        value = value.data
    # np.ascontiguousarray would promote 0-d arrays to shape (1,)
    return np.require(np.asarray(value, dtype="<f8"), requirements="C")


def dump_checkpoint(arrays: Mapping[str, object]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(arrays)))
    for name in sorted(arrays):
        arr = _as_array(arrays[name])
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    return buf.getvalue()


def load_checkpoint_bytes(raw: bytes) -> dict[str, np.ndarray]:
    view = memoryview(raw)
    if bytes(view[:8]) != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    pos = 8

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise DataError("truncated checkpoint")
        vals = struct.unpack_from(fmt, view, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = bytes(view[pos : pos + name_len]).decode("utf-8")
        pos += name_len
        (rank,) = take("<I")
        shape = take(f"<{rank}Q") if rank else ()
        n = int(np.prod(shape)) if rank else 1
        nbytes = 8 * n
        if pos + nbytes > len(view):
            raise DataError(f"truncated payload for {name!r}")
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(shape)
        pos += nbytes
        if name in out:
            raise DataError(f"duplicate checkpoint entry {name!r}")
        out[name] = arr.astype(np.float64)
    if pos != len(view):
        raise DataError("trailing bytes after last checkpoint entry")
    return out


def save_checkpoint(path: PathLike, arrays: Mapping[str, object]) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_checkpoint(arrays))


def load_checkpoint(path: PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return load_checkpoint_bytes(fh.read())


def restore_into(params: Mapping[str, Tensor], arrays: Mapping[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into existing parameter tensors (names and shapes must agree)."""
    missing = set(params) - set(arrays)
    unexpected = set(arrays) - set(params)
    if missing or unexpected:
        raise ContractError(f"checkpoint mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
    for name, p in params.items():
        if arrays[name].shape != p.shape:
            raise ContractError(f"{name!r}: checkpoint shape {arrays[name].shape} != parameter shape {p.shape}")
        p.data = np.array(arrays[name], dtype=np.float64)
