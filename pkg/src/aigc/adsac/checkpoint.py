"""Flat binary parameter checkpoints.

Layout (little-endian):

    magic   4 bytes  b"ADSC"
    version u32
    count   u32
    count × (name_len u32, name utf-8, rows u32, cols u32, rows·cols float64)

Vectors are stored as one row.
"""
import hashlib
import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np
import torch
from torch import nn

from aigc.adsac.exceptions import CheckpointError
from aigc.adsac.nn import DTYPE

lg = logging.getLogger(__name__)

MAGIC = b"ADSC"
VERSION = 1
_U32 = struct.Struct("<I")
_HEADER = struct.Struct("<4sII")


def encode(tensors: Mapping[str, torch.Tensor]) -> bytes:
    chunks = [_HEADER.pack(MAGIC, VERSION, len(tensors))]
    for name, t in tensors.items():
        values = t.detach().cpu().to(DTYPE)
        if values.dim() > 2:
            raise CheckpointError(f"{name}: only matrices and vectors are supported")
        rows, cols = (1, values.numel()) if values.dim() < 2 else tuple(values.shape)
        raw = name.encode("utf-8")
        chunks.append(_U32.pack(len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<II", rows, cols))
        chunks.append(values.numpy().astype("<f8").tobytes())
    return b"".join(chunks)


def decode(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    if len(blob) < _HEADER.size:
        raise CheckpointError("checkpoint is truncated: no header")
    magic, version, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic number {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    pos = _HEADER.size
    try:
        for _ in range(count):
            (n,) = _U32.unpack_from(blob, pos)
            pos += _U32.size
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            rows, cols = struct.unpack_from("<II", blob, pos)
            pos += 8
            size = rows * cols * 8
            if pos + size > len(blob):
                raise CheckpointError(f"checkpoint is truncated inside {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=pos).reshape(
                rows, cols
            )
            pos += size
    except struct.error as e:
        raise CheckpointError(f"checkpoint is truncated: {e}") from e
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes after {count} parameters")
    return out


def save(path: Union[str, Path], module: nn.Module) -> str:
    """Write the module's parameters; returns the sha256 of the file contents."""
    blob = encode(OrderedDict(module.named_parameters()))
    Path(path).write_bytes(blob)
    digest = hashlib.sha256(blob).hexdigest()
    lg.info("wrote checkpoint %s (%d bytes, sha256 %s)", path, len(blob), digest[:12])
    return digest


def load_into(path: Union[str, Path], module: nn.Module) -> nn.Module:
    """Copy checkpoint values into `module`, checking names and shapes."""
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {str(path)!r}: {e.strerror}") from e
    stored = decode(blob)
    params: Dict[str, nn.Parameter] = dict(module.named_parameters())
    if set(stored) != set(params):
        missing = sorted(set(params) - set(stored))
        extra = sorted(set(stored) - set(params))
        raise CheckpointError(
            f"checkpoint {str(path)!r} does not match the network: "
            f"missing {missing[:5]}, unexpected {extra[:5]}"
        )
    with torch.no_grad():
        for name, p in params.items():
            values = stored[name]
            expected = tuple(p.shape) if p.dim() == 2 else (1, p.numel())
            if values.shape != expected:
                raise CheckpointError(
                    f"{name}: checkpoint shape {values.shape} != network shape {expected}"
                )
            p.copy_(torch.from_numpy(values.copy()).reshape(p.shape))
    return module


def file_digest(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
