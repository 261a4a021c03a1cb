"""Binary file formats.

F32R raster::

    b"F32R" | u32 channels | u32 height | u32 width | float32 payload

Payload is little-endian, channel-major then row-major, exactly 4*C*H*W bytes.

Checkpoint (``.hoho``)::

    b"HOHO" | u32 version=1 | u32 count |
    count x (u32 name_len | utf-8 name | u32 ndim | ndim x u32 dims | float32 payload)

Label maps are binary 16-bit PGM (``P5``, maxval 65535, big-endian samples).
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import Tensor

RASTER_MAGIC = b"F32R"
CKPT_MAGIC = b"HOHO"
CKPT_VERSION = 1


class FormatError(ValueError):
    """A file does not match its declared binary layout."""


def write_f32r(path, arr) -> None:
    a = np.asarray(arr, dtype="<f4")
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"raster must be [C, H, W] or [H, W], got shape {a.shape}")
    c, h, w = a.shape
    with open(path, "wb") as f:
        f.write(RASTER_MAGIC + struct.pack("<III", c, h, w))
        f.write(np.ascontiguousarray(a).tobytes())


def read_f32r(path) -> np.ndarray:
    """Read a raster as float32 [C, H, W]."""
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != RASTER_MAGIC:
        raise FormatError(f"{path}: not an F32R raster (bad magic)")
    c, h, w = struct.unpack_from("<III", blob, 4)
    if len(blob) - 16 != 4 * c * h * w:
        raise FormatError(f"{path}: payload is {len(blob) - 16} bytes, expected {4 * c * h * w}")
    return np.frombuffer(blob, dtype="<f4", offset=16).reshape(c, h, w).astype(np.float32)


def write_pgm16(path, labels) -> None:
    a = np.asarray(labels)
    if a.ndim != 2:
        raise ValueError(f"label map must be 2-D, got shape {a.shape}")
    if a.min(initial=0) < 0 or a.max(initial=0) > 65535:
        raise ValueError("labels must fit in 16 bits")
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(a.astype(">u2").tobytes())


def read_pgm16(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    n = w * h * np.dtype(dtype).itemsize
    if len(blob) - pos != n:
        raise FormatError(f"{path}: payload is {len(blob) - pos} bytes, expected {n}")
    return np.frombuffer(blob, dtype=dtype, offset=pos).reshape(h, w).astype(np.int64)


def save_checkpoint(path, tensors: Mapping[str, Tensor | np.ndarray]) -> None:
    """Write named tensors in mapping order as float32."""
    chunks = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(tensors))]
    for name, t in tensors.items():
        a = np.asarray(t.data if isinstance(t, Tensor) else t, dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        chunks.append(np.ascontiguousarray(a).tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        if version != CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            size = int(np.prod(dims)) if ndim else 1
            out[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * size
    except (struct.error, ValueError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"{path}: truncated or corrupt checkpoint ({e})") from e
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes")
    return out


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
