"""Binary tensor-map files.

Layout (little-endian): 4-byte magic, u32 count, then per tensor
u16 name length, UTF-8 name, u8 rank, u32 dim * rank, f32 payload (row-major).
Model weights use magic ``CKPT``; optimizer moments use ``OPTS``.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from ..errors import DataError

MODEL_MAGIC = b"CKPT"
OPTIM_MAGIC = b"OPTS"


def write_tensor_map(path: str | Path, tensors: Mapping[str, torch.Tensor], magic: bytes = MODEL_MAGIC) -> None:
    chunks = [magic, struct.pack("<I", len(tensors))]
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(t.detach().cpu().numpy(), dtype="<f4", order="C")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def read_tensor_map(path: str | Path, magic: bytes = MODEL_MAGIC) -> dict[str, torch.Tensor]:
    """Parse a whole file before returning anything, so a corrupt file never half-loads."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    if buf[:4] != magic:
        raise DataError(f"{path}: bad magic {buf[:4]!r}, expected {magic!r}")
    out: dict[str, torch.Tensor] = {}
    try:
        (count,) = struct.unpack_from("<I", buf, 4)
        off = 8
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, off)
            name = buf[off + 2 : off + 2 + n].decode("utf-8")
            off += 2 + n
            (rank,) = struct.unpack_from("<B", buf, off)
            shape = struct.unpack_from(f"<{rank}I", buf, off + 1)
            off += 1 + 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if off + 4 * size > len(buf):
                raise DataError(f"{path}: truncated payload for {name!r}")
            arr = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape)
            out[name] = torch.from_numpy(arr.astype(np.float32))
            off += 4 * size
    except (struct.error, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint ({exc})") from None
    if off != len(buf):
        raise DataError(f"{path}: {len(buf) - off} trailing bytes")
    return out
