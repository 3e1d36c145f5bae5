"""Self-describing named-array checkpoint archive.

Layout: magic, format version, JSON config block, then named float64 entries
(name, dtype code, shape, raw little-endian data), closed by a SHA-256
checksum over everything before it.  Round-trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"F2VA"
VERSION = 1
_DTYPE_F64 = 0


def save_archive(path, config: dict, arrays: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    config_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<Q", len(config_bytes)))
    buf.write(config_bytes)
    buf.write(struct.pack("<Q", len(arrays)))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        name_bytes = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_bytes)))
        buf.write(name_bytes)
        buf.write(struct.pack("<BB", _DTYPE_F64, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).digest()
    Path(path).write_bytes(payload + digest)


def load_archive(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 32 + len(MAGIC) + 4:
        raise CheckpointError(f"{path}: truncated checkpoint")
    payload, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupted")
    buf = io.BytesIO(payload)
    if buf.read(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint archive")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (config_len,) = struct.unpack("<Q", buf.read(8))
    config = json.loads(buf.read(config_len).decode("utf-8"))
    (n_entries,) = struct.unpack("<Q", buf.read(8))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_entries):
        (name_len,) = struct.unpack("<H", buf.read(2))
        name = buf.read(name_len).decode("utf-8")
        dtype_code, ndim = struct.unpack("<BB", buf.read(2))
        if dtype_code != _DTYPE_F64:
            raise CheckpointError(f"{path}: unknown dtype code {dtype_code} for {name!r}")
        shape = struct.unpack(f"<{ndim}Q", buf.read(8 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        data = buf.read(8 * count)
        if len(data) != 8 * count:
            raise CheckpointError(f"{path}: truncated data for entry {name!r}")
        arrays[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
    return config, arrays
