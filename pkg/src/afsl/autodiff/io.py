"""Tensor files: one JSON header line ``{"shape": [...]}`` then little-endian float64, row-major."""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .tensor import Tensor

_DTYPE = np.dtype("<f8")


def dumps_tensor(array) -> bytes:
    arr = np.ascontiguousarray(array.data if isinstance(array, Tensor) else array, dtype=_DTYPE)
    header = json.dumps({"shape": list(arr.shape)}).encode() + b"\n"
    return header + arr.tobytes(order="C")


def loads_tensor(blob: bytes) -> np.ndarray:
    newline = blob.index(b"\n")
    header = json.loads(blob[:newline])
    shape = tuple(int(s) for s in header["shape"])
    body = blob[newline + 1 :]
    expected = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
    if len(body) != expected:
        raise ValueError(f"tensor payload has {len(body)} bytes, header shape {shape} needs {expected}")
    return np.frombuffer(body, dtype=_DTYPE).reshape(shape).astype(np.float64)


def save_tensor(path: str | os.PathLike, array) -> None:
    Path(path).write_bytes(dumps_tensor(array))


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    return loads_tensor(Path(path).read_bytes())
