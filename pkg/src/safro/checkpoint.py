"""Flat binary tensor checkpoints shared by the policy and the reward model.

Layout (little-endian): an int32 tensor count, then per tensor an int32
rank followed by its int32 dimensions, then every tensor's float64 payload
in row-major order, concatenated in header order. Model configuration goes
in a JSON sidecar next to the binary file.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

_I4 = np.dtype("<i4")
_F8 = np.dtype("<f8")


def save_tensors(path: str | Path, tensors: Sequence[np.ndarray]) -> None:
    path = Path(path)
    header = [np.int32(len(tensors))]
    for t in tensors:
        header.append(np.int32(t.ndim))
        header.extend(np.int32(d) for d in t.shape)
    with path.open("wb") as fh:
        fh.write(np.asarray(header, dtype=_I4).tobytes())
        for t in tensors:
            fh.write(np.ascontiguousarray(t, dtype=np.float64).astype(_F8).tobytes())


def load_tensors(path: str | Path) -> list[np.ndarray]:
    raw = Path(path).read_bytes()
    ints = np.frombuffer(raw, dtype=_I4)
    count = int(ints[0])
    shapes = []
    pos = 1
    for _ in range(count):
        ndim = int(ints[pos])
        pos += 1
        shapes.append(tuple(int(d) for d in ints[pos : pos + ndim]))
        pos += ndim
    offset = pos * _I4.itemsize
    tensors = []
    for shape in shapes:
        n = int(np.prod(shape)) if shape else 1
        flat = np.frombuffer(raw, dtype=_F8, count=n, offset=offset)
        tensors.append(flat.astype(np.float64).reshape(shape))
        offset += n * _F8.itemsize
    return tensors


def save_sidecar(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def load_sidecar(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
