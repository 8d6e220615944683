"""Binary checkpoint format.

Layout (little-endian)::

    magic  b"KGMN"  | uint32 version
    repeated until EOF:
        uint32 name_len | name (utf-8) | uint32 rank | uint32 dims[rank] | float32 data[prod(dims)]
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .params import ParameterStore

MAGIC = b"KGMN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: ParameterStore, path) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, t in params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", t.ndim))
        chunks.append(struct.pack(f"<{t.ndim}I", *t.shape))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(chunks))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_checkpoint(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
            pos += 4 * count
            out[name] = data.reshape(dims).copy()
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path}: truncated checkpoint ({e})") from None
    return out


def load_checkpoint(params: ParameterStore, path) -> None:
    """Copy stored values into ``params``; names and shapes must match exactly."""
    stored = read_checkpoint(path)
    missing = [k for k in params if k not in stored]
    extra = [k for k in stored if k not in params]
    if missing or extra:
        raise CheckpointError(f"parameter set mismatch: missing={missing} unexpected={extra}")
    for name, t in params.items():
        arr = stored[name]
        if arr.shape != t.shape:
            raise CheckpointError(f"{name}: checkpoint shape {arr.shape} != model shape {t.shape}")
        t.data = arr.astype(t.data.dtype)
