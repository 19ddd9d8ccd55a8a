"""Minimal writer/reader for the float32 tensor container.

Safetensors layout: 8-byte little-endian header length, JSON header of
``{name: {"dtype": "F32", "shape": [...], "data_offsets": [begin, end]}}``,
then the raw payload. Entries are written in lexicographic name order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import BridgeError


def write_tensors(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    header: dict[str, dict] = {}
    chunks: list[bytes] = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        blob = arr.tobytes()
        header[name] = {
            "dtype": "F32",
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(blob)],
        }
        chunks.append(blob)
        offset += len(blob)
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    blob += b" " * (-(8 + len(blob)) % 8)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)


def read_tensors(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise BridgeError(f"{path}: too short for a container header")
    (header_len,) = struct.unpack("<Q", raw[:8])
    if header_len > len(raw) - 8:
        raise BridgeError(f"{path}: header length exceeds file size")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BridgeError(f"{path}: malformed header: {exc}") from exc
    payload = memoryview(raw)[8 + header_len :]
    out: dict[str, np.ndarray] = {}
    for name, meta in header.items():
        if name == "__metadata__":
            continue
        if meta.get("dtype") != "F32":
            raise BridgeError(f"{path}: tensor '{name}' is not F32")
        begin, end = meta["data_offsets"]
        out[name] = np.frombuffer(payload[begin:end], dtype="<f4").reshape(meta["shape"])
    return out
