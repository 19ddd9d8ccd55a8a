"""Ordered framework-name to neutral-name mapping."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import BridgeError


@dataclass(frozen=True)
class NameMap:
    """Ordered (framework parameter name, neutral tensor name) pairs.

    Bijective over both sides; the pair order defines layer indices and
    must match the selector order used by the analysis toolkit.
    """

    pairs: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "pairs", tuple((str(a), str(b)) for a, b in self.pairs))
        framework = [a for a, _ in self.pairs]
        neutral = [b for _, b in self.pairs]
        if len(set(framework)) != len(framework) or len(set(neutral)) != len(neutral):
            raise BridgeError("name map must be bijective: duplicate names found")

    @classmethod
    def load(cls, path: str | Path) -> "NameMap":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        if not isinstance(obj, list) or any(
            not isinstance(p, list) or len(p) != 2 for p in obj
        ):
            raise BridgeError(f"{path}: name map must be a JSON list of [framework, neutral] pairs")
        return cls(pairs=tuple((p[0], p[1]) for p in obj))

    def to_neutral(self) -> dict[str, str]:
        return dict(self.pairs)

    def to_framework(self) -> dict[str, str]:
        return {neutral: framework for framework, neutral in self.pairs}
