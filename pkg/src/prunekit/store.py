"""Named float32 tensor container and conv-layer selection.

The on-disk format is the widely used safetensors layout: an 8-byte
little-endian header length, a JSON header mapping tensor names to
``{"dtype": "F32", "shape": [...], "data_offsets": [begin, end]}``, then the
raw little-endian payload. Only 32-bit float tensors are accepted.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from fnmatch import fnmatchcase
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import CorruptionError, FormatError, SelectionError, ValidationError

_DTYPE_TAG = "F32"
_ITEM_SIZE = 4
# Refuse absurd header sizes before handing bytes to the JSON parser.
_MAX_HEADER_BYTES = 100 * 1024 * 1024


class TensorStore:
    """Immutable ordered collection of named float32 tensors.

    Iteration order is lexicographic by name regardless of construction or
    file order. Arrays are read-only so a loaded store can be shared across
    threads without copying.
    """

    def __init__(self, entries: Mapping[str, np.ndarray]):
        tensors: dict[str, np.ndarray] = {}
        for name in sorted(entries):
            if not isinstance(name, str) or not name:
                raise ValidationError(f"tensor name must be a non-empty string, got {name!r}")
            arr = np.asarray(entries[name], dtype=np.float32)
            if any(dim < 1 for dim in arr.shape):
                raise ValidationError(f"tensor '{name}' has a non-positive dimension: {arr.shape}")
            _check_finite(name, arr)
            arr = arr.copy()
            arr.setflags(write=False)
            tensors[name] = arr
        self._tensors = tensors

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self._tensors.items())

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TensorStore):
            return NotImplemented
        if self.names() != other.names():
            return False
        # Bitwise comparison: distinguishes -0.0 from 0.0 and guarantees the
        # round-trip identity the format promises.
        return all(
            a.shape == other[n].shape and a.tobytes() == other[n].tobytes()
            for n, a in self.items()
        )

    def __repr__(self) -> str:
        return f"TensorStore({len(self)} tensors)"


def _check_finite(name: str, arr: np.ndarray) -> None:
    flat = arr.reshape(-1)
    finite = np.isfinite(flat)
    if not finite.all():
        idx = int(np.argmin(finite))
        raise ValidationError(
            f"tensor '{name}' has non-finite value {flat[idx]!r} at flat index {idx}"
        )


def load_store(path: str | Path) -> TensorStore:
    """Load and validate a tensor container file."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FormatError(f"{path}: file too short for a header length field")
    (header_len,) = struct.unpack("<Q", raw[:8])
    if header_len > _MAX_HEADER_BYTES or header_len > len(raw) - 8:
        raise FormatError(f"{path}: declared header length {header_len} exceeds file size")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header must be a JSON object")

    payload = memoryview(raw)[8 + header_len :]
    entries: dict[str, np.ndarray] = {}
    for name, meta in header.items():
        if name == "__metadata__":
            continue
        if not isinstance(meta, dict):
            raise FormatError(f"{path}: entry '{name}' is not an object")
        dtype = meta.get("dtype")
        if dtype != _DTYPE_TAG:
            raise FormatError(f"{path}: tensor '{name}' has unsupported dtype {dtype!r}")
        shape = meta.get("shape")
        if (
            not isinstance(shape, list)
            or any(not isinstance(d, int) or isinstance(d, bool) or d < 1 for d in shape)
        ):
            raise FormatError(f"{path}: tensor '{name}' has invalid shape {shape!r}")
        offsets = meta.get("data_offsets")
        if (
            not isinstance(offsets, list)
            or len(offsets) != 2
            or any(not isinstance(o, int) or isinstance(o, bool) for o in offsets)
        ):
            raise FormatError(f"{path}: tensor '{name}' has invalid data_offsets {offsets!r}")
        begin, end = offsets
        if begin < 0 or end < begin or end > len(payload):
            raise CorruptionError(
                f"{path}: tensor '{name}' offsets [{begin}, {end}) fall outside the payload"
            )
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if end - begin != count * _ITEM_SIZE:
            raise CorruptionError(
                f"{path}: tensor '{name}' declares shape {shape} ({count} values) "
                f"but carries {(end - begin) // _ITEM_SIZE} values"
            )
        data = np.frombuffer(payload[begin:end], dtype="<f4").reshape(shape)
        _check_finite(name, data)
        entries[name] = data
    return TensorStore(entries)


def save_store(store: TensorStore, path: str | Path) -> None:
    """Write a store to ``path``; the file reloads to a bitwise-equal store.

    The write is atomic (temp file in the target directory, then rename) and
    deterministic: entries are laid out in lexicographic name order.
    """
    path = Path(path)
    header: dict[str, dict] = {}
    chunks: list[bytes] = []
    offset = 0
    for name, arr in store.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        header[name] = {
            "dtype": _DTYPE_TAG,
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(blob)],
        }
        chunks.append(blob)
        offset += len(blob)
    header_json = json.dumps(header, separators=(",", ":")).encode("utf-8")
    padding = -(8 + len(header_json)) % 8
    header_json += b" " * padding

    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(struct.pack("<Q", len(header_json)))
            fh.write(header_json)
            for blob in chunks:
                fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class LayerSelector:
    """Ordered name patterns that pick conv weight tensors out of a store.

    Patterns are exact names or fnmatch-style globs. The pattern list, not
    the file, is the source of truth for layer order: layer ``l`` is the
    ``l``-th match. Names matched by an earlier pattern are not re-matched.
    """

    patterns: tuple[str, ...]
    expected_rank: int = 4

    def __post_init__(self) -> None:
        object.__setattr__(self, "patterns", tuple(self.patterns))
        if not self.patterns:
            raise SelectionError("selector needs at least one pattern")

    @classmethod
    def from_config(cls, config: Mapping) -> "LayerSelector":
        """Build from a ``{"layers": [name-or-glob, ...]}`` document."""
        layers = config.get("layers")
        if not isinstance(layers, list) or not all(isinstance(p, str) for p in layers):
            raise SelectionError('selection config must contain "layers": [patterns...]')
        return cls(patterns=tuple(layers))

    def to_config(self) -> dict:
        return {"layers": list(self.patterns)}


def select_conv_layers(
    store: TensorStore, selector: LayerSelector
) -> list[tuple[str, np.ndarray]]:
    """Resolve a selector against a store into ordered (name, tensor) layers.

    Within one glob, matches come in the store's lexicographic order. Every
    match must have ``selector.expected_rank``; an overall empty match is an
    error.
    """
    matched: list[tuple[str, np.ndarray]] = []
    seen: set[str] = set()
    for pattern in selector.patterns:
        for name in store.names():
            if name in seen or not fnmatchcase(name, pattern):
                continue
            tensor = store[name]
            if tensor.ndim != selector.expected_rank:
                raise SelectionError(
                    f"pattern '{pattern}' matched tensor '{name}' of rank {tensor.ndim}, "
                    f"expected rank {selector.expected_rank}"
                )
            seen.add(name)
            matched.append((name, tensor))
    if not matched:
        raise SelectionError(f"no tensors matched selector patterns {list(selector.patterns)}")
    return matched
