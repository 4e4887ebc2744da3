"""Binary checkpoint format.

Layout (little-endian)::

    b"MDML" | u32 version | u32 tensor count
    per tensor: u16 name length | name (UTF-8) | u8 rank | rank x u64 extents | float32 payload

Model parameters use their dotted names; optimizer momentum buffers are
stored under ``opt/<name>`` and scalar counters under ``state/<field>``.
"""
from __future__ import annotations

import os
import struct
from collections import OrderedDict

import numpy as np

from .errors import CheckpointError

MAGIC = b"MDML"
VERSION = 1
_HEADER = struct.Struct("<4sII")


def tensor_record_size(name: str, shape: tuple) -> int:
    return 2 + len(name.encode("utf-8")) + 1 + 8 * len(shape) + 4 * int(np.prod(shape, dtype=np.int64))


def write_tensors(path: str | os.PathLike, tensors: "OrderedDict[str, np.ndarray]") -> None:
    chunks = [_HEADER.pack(MAGIC, VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        if arr.ndim < 1 or arr.ndim > 255:
            raise CheckpointError(f"tensor {name!r}: unsupported rank {arr.ndim}")
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            for c in chunks:
                fh.write(c)
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def read_tensors(path: str | os.PathLike) -> "OrderedDict[str, np.ndarray]":
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    out = OrderedDict()
    pos = _HEADER.size
    name = "<header>"
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            nbytes = 4 * int(np.prod(shape, dtype=np.int64))
            if pos + nbytes > len(data):
                raise CheckpointError(f"{path}: tensor {name!r} truncated")
            out[name] = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape).copy()
            pos += nbytes
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupted near tensor {name!r}: {exc}") from exc
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return out


def save_checkpoint(path, model, state=None) -> None:
    tensors = OrderedDict((name, p.value) for name, p in model.named_parameters())
    if state is not None:
        for name, buf in state.momentum.items():
            tensors[f"opt/{name}"] = buf
        for field in ("epoch", "step"):
            tensors[f"state/{field}"] = np.array([getattr(state, field)], dtype=np.float32)
        tensors["state/best_metric"] = np.array([state.best_metric], dtype=np.float32)
    write_tensors(path, tensors)


def load_checkpoint(path, model, state=None):
    """Copy tensors from ``path`` into ``model`` (and ``state`` when given).

    Every model parameter must be present with a matching shape.
    """
    tensors = read_tensors(path)
    params = OrderedDict(model.named_parameters())
    for name, p in params.items():
        if name not in tensors:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        arr = tensors[name]
        if arr.shape != p.shape:
            raise CheckpointError(f"{path}: tensor {name!r} has shape {arr.shape}, model expects {p.shape}")
        p.value = arr.astype(model.dtype)
    extra = [n for n in tensors if n not in params and not n.startswith(("opt/", "state/"))]
    if extra:
        raise CheckpointError(f"{path}: unexpected tensor {extra[0]!r} for this model config")
    if state is not None:
        state.momentum = OrderedDict()
        for name, p in params.items():
            buf = tensors.get(f"opt/{name}")
            if buf is not None:
                if buf.shape != p.shape:
                    raise CheckpointError(f"{path}: tensor 'opt/{name}' shape {buf.shape} != {p.shape}")
                state.momentum[name] = buf.astype(model.dtype)
        if "state/epoch" in tensors:
            state.epoch = int(tensors["state/epoch"][0])
            state.step = int(tensors["state/step"][0])
            state.best_metric = float(tensors["state/best_metric"][0])
    return model, state
