"""Binary parameter checkpoints with an exact round-trip guarantee.

Layout (little-endian throughout):

    magic   b"CKPT1\\n"
    kind    u32 length + ascii model-kind string
    meta    u32 length + ascii JSON (config echo: layer sizes, variant, ...)
    count   u32 number of arrays
    arrays  for each: u32 ndim, u64 dims..., raw float64 data, row-major

Arrays are stored in a model-defined section order (documented by each
model's ``save``/``load``), e.g. GKN orders blocks Z, W, kernel layers, F.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CKPT1\n"


class CheckpointError(ValueError):
    """Malformed or mismatched checkpoint file."""


def save_checkpoint(
    path: str | Path, kind: str, meta: dict, arrays: list[np.ndarray]
) -> None:
    path = Path(path)
    blob = bytearray()
    blob += MAGIC
    kind_b = kind.encode("ascii")
    blob += struct.pack("<I", len(kind_b)) + kind_b
    meta_b = json.dumps(meta, sort_keys=True).encode("ascii")
    blob += struct.pack("<I", len(meta_b)) + meta_b
    blob += struct.pack("<I", len(arrays))
    for a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        blob += struct.pack("<I", a.ndim)
        blob += struct.pack(f"<{a.ndim}Q", *a.shape)
        blob += a.tobytes()
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[str, dict, list[np.ndarray]]:
    data = Path(path).read_bytes()
    off = 0

    def need(n: int) -> bytes:
        nonlocal off
        if off + n > len(data):
            raise CheckpointError(f"truncated checkpoint at byte {off}")
        chunk = data[off : off + n]
        off += n
        return chunk

    if need(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad magic: not a cloudop checkpoint")
    (kind_len,) = struct.unpack("<I", need(4))
    kind = need(kind_len).decode("ascii")
    (meta_len,) = struct.unpack("<I", need(4))
    try:
        meta = json.loads(need(meta_len).decode("ascii"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"bad metadata JSON at byte {off - meta_len}: {exc}")
    (count,) = struct.unpack("<I", need(4))
    arrays = []
    for _ in range(count):
        (ndim,) = struct.unpack("<I", need(4))
        shape = struct.unpack(f"<{ndim}Q", need(8 * ndim))
        n_bytes = 8 * int(np.prod(shape, dtype=np.int64)) if ndim else 8
        raw = need(n_bytes)
        arrays.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
    if off != len(data):
        raise CheckpointError(f"{len(data) - off} trailing bytes at offset {off}")
    return kind, meta, arrays
