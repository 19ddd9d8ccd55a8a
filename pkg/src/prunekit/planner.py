"""Turn per-layer scores and pruning rates into deterministic pruning plans.

Single-shot semantics: scores come from the unpruned store, the plan is
built once, and applying it never feeds back into scoring. Soft application
zeroes pruned filters in place; hard application removes them and the
matching input channels of successor layers where the architecture says
that is structurally safe.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import PlanError, SelectionError, StructuralError
from .criteria import CriterionKind, ScoreReport, importance_order
from .store import LayerSelector, TensorStore, select_conv_layers

TIE_RULE = "score_asc_index_asc"

# Guards rates given exactly as k/n whose float product lands a hair under
# the integer k; never large enough to round 25.6 kinds of products up.
_COUNT_EPS = 1e-9


@dataclass(frozen=True)
class RateSchedule:
    """A default pruning rate plus per-layer overrides, all in [0, 1]."""

    default_rate: float = 0.0
    overrides: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "default_rate", float(self.default_rate))
        frozen = MappingProxyType({str(k): float(v) for k, v in dict(self.overrides).items()})
        object.__setattr__(self, "overrides", frozen)
        for name, rate in [("default_rate", self.default_rate), *self.overrides.items()]:
            if not (0.0 <= rate <= 1.0) or not math.isfinite(rate):
                raise PlanError(f"rate for {name!r} must be in [0, 1], got {rate}")

    def rate_for(self, layer_name: str) -> float:
        return self.overrides.get(layer_name, self.default_rate)


def prune_count(n_filters: int, rate: float) -> int:
    """floor(rate * n): how many filters a rate removes from a layer."""
    if n_filters < 1:
        raise PlanError(f"layer must have at least one filter, got {n_filters}")
    if not (0.0 <= rate <= 1.0):
        raise PlanError(f"rate must be in [0, 1], got {rate}")
    return min(n_filters, int(math.floor(n_filters * rate + _COUNT_EPS)))


@dataclass(frozen=True)
class LayerPlan:
    """Pruned filter indices (sorted ascending) for one layer of n_out filters."""

    pruned: tuple[int, ...]
    n_out: int

    @property
    def kept(self) -> int:
        return self.n_out - len(self.pruned)


@dataclass(frozen=True)
class PruningPlan:
    """Per-layer pruned index lists plus the provenance that produced them.

    A plan is a pure function of (scores, schedule, tie rule): rebuilding
    from identical inputs yields byte-identical JSON.
    """

    criterion: CriterionKind
    per_layer: Mapping[str, LayerPlan]
    tie_rule: str = TIE_RULE

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_layer", MappingProxyType(dict(self.per_layer)))

    @property
    def counts(self) -> dict[str, tuple[int, int]]:
        return {name: (lp.kept, len(lp.pruned)) for name, lp in self.per_layer.items()}

    @property
    def total_pruned(self) -> int:
        return sum(len(lp.pruned) for lp in self.per_layer.values())

    def to_json(self) -> dict:
        return {
            "criterion": self.criterion.to_json(),
            "tie_rule": self.tie_rule,
            "layers": {
                name: {"pruned": list(lp.pruned), "n_out": lp.n_out}
                for name, lp in self.per_layer.items()
            },
        }

    def to_json_bytes(self) -> bytes:
        return (json.dumps(self.to_json(), indent=2) + "\n").encode("utf-8")

    @classmethod
    def from_json(cls, obj: Mapping) -> "PruningPlan":
        # Parsing stays lenient about index contents so validate_plan can
        # diagnose hand-edited files instead of refusing to read them.
        layers = obj.get("layers")
        if not isinstance(layers, Mapping):
            raise PlanError('plan JSON must contain a "layers" object')
        per_layer = {}
        for name, entry in layers.items():
            try:
                pruned = tuple(int(i) for i in entry["pruned"])
                n_out = int(entry["n_out"])
            except (KeyError, TypeError, ValueError) as exc:
                raise PlanError(f"layer '{name}': malformed plan entry: {exc}") from exc
            per_layer[name] = LayerPlan(pruned=pruned, n_out=n_out)
        return cls(
            criterion=CriterionKind.from_json(obj["criterion"]),
            per_layer=per_layer,
            tie_rule=str(obj.get("tie_rule", TIE_RULE)),
        )


def build_plan(reports: Sequence[ScoreReport], schedule: RateSchedule) -> PruningPlan:
    """Prune the lowest-scored filters of every reported layer.

    Indices sort by (score ascending, index ascending) and the first
    ``prune_count`` entries are pruned, so ties resolve toward the lower
    index and raising a rate only ever grows the pruned set.
    """
    if not reports:
        raise PlanError("cannot build a plan from zero score reports")
    names = [r.layer_name for r in reports]
    if len(set(names)) != len(names):
        raise PlanError("duplicate layer names in score reports")
    unknown = set(schedule.overrides) - set(names)
    if unknown:
        raise PlanError(f"schedule overrides name unknown layers: {sorted(unknown)}")
    criterion = reports[0].criterion
    if any(r.criterion != criterion for r in reports):
        raise PlanError("all score reports in one plan must share a criterion")

    per_layer: dict[str, LayerPlan] = {}
    for report in reports:
        n = report.scores.shape[0]
        k = prune_count(n, schedule.rate_for(report.layer_name))
        order = importance_order(report.scores)
        pruned = tuple(sorted(int(i) for i in order[:k]))
        per_layer[report.layer_name] = LayerPlan(pruned=pruned, n_out=n)
    return PruningPlan(criterion=criterion, per_layer=per_layer)


def _check_indices(name: str, pruned: Iterable[int], n_out: int) -> None:
    seen = set()
    for idx in pruned:
        if idx < 0 or idx >= n_out:
            raise PlanError(f"layer '{name}': pruned index {idx} out of range for {n_out} filters")
        if idx in seen:
            raise PlanError(f"layer '{name}': duplicate pruned index {idx}")
        seen.add(idx)


def apply_soft(store: TensorStore, plan: PruningPlan, selector: LayerSelector) -> TensorStore:
    """Zero the pruned filter rows; shapes are preserved.

    Tensors outside the plan are carried over bit-identically.
    """
    layers = dict(select_conv_layers(store, selector))
    new_entries: dict[str, np.ndarray] = dict(store.items())
    for name, lp in plan.per_layer.items():
        if name not in layers:
            raise PlanError(f"planned layer '{name}' is not among the selected conv layers")
        tensor = layers[name]
        if lp.n_out != tensor.shape[0]:
            raise PlanError(
                f"layer '{name}': plan expects {lp.n_out} filters, store has {tensor.shape[0]}"
            )
        _check_indices(name, lp.pruned, tensor.shape[0])
        if lp.pruned:
            pruned_rows = tensor.copy()
            pruned_rows[list(lp.pruned)] = 0.0
            new_entries[name] = pruned_rows
    return TensorStore(new_entries)


def apply_hard(store: TensorStore, plan: PruningPlan, arch) -> TensorStore:
    """Structurally remove pruned filters where the architecture allows it.

    For compaction-safe layers the pruned output rows are deleted and the
    same channel indices disappear from every successor's input dimension.
    Mask-only layers (residual joins and the like) fall back to zeroing, so
    their successors keep full input width.
    """
    rows_to_drop: dict[str, tuple[int, ...]] = {}
    cols_to_drop: dict[str, tuple[int, ...]] = {}
    mask_layers: dict[str, tuple[int, ...]] = {}

    for name, lp in plan.per_layer.items():
        layer = arch.layer(name)
        if layer is None:
            raise PlanError(f"planned layer '{name}' is not in the architecture")
        if name not in store:
            raise PlanError(f"planned layer '{name}' is not in the store")
        tensor = store[name]
        if tensor.ndim != 4:
            raise StructuralError(f"layer '{name}' is not a rank-4 conv weight")
        if tensor.shape[0] != layer.n_out or tensor.shape[1] != layer.n_in:
            raise StructuralError(
                f"layer '{name}': store shape {tensor.shape} disagrees with architecture "
                f"({layer.n_out} out, {layer.n_in} in)"
            )
        if lp.n_out != tensor.shape[0]:
            raise PlanError(
                f"layer '{name}': plan expects {lp.n_out} filters, store has {tensor.shape[0]}"
            )
        _check_indices(name, lp.pruned, tensor.shape[0])
        if not lp.pruned:
            continue
        if layer.compaction_safe:
            rows_to_drop[name] = lp.pruned
            for succ in arch.successors.get(name, ()):
                if succ not in store:
                    raise StructuralError(
                        f"layer '{name}': successor '{succ}' is missing from the store"
                    )
                if succ in cols_to_drop:
                    raise StructuralError(
                        f"layer '{succ}' has multiple pruned compaction-safe predecessors"
                    )
                succ_tensor = store[succ]
                if succ_tensor.ndim != 4 or succ_tensor.shape[1] != tensor.shape[0]:
                    raise StructuralError(
                        f"successor '{succ}' input channels {succ_tensor.shape} do not match "
                        f"'{name}' output count {tensor.shape[0]}"
                    )
                cols_to_drop[succ] = lp.pruned
        else:
            mask_layers[name] = lp.pruned

    new_entries: dict[str, np.ndarray] = {}
    for name, tensor in store.items():
        arr = tensor
        if name in mask_layers:
            arr = arr.copy()
            arr[list(mask_layers[name])] = 0.0
        if name in rows_to_drop:
            arr = np.delete(arr, rows_to_drop[name], axis=0)
        if name in cols_to_drop:
            arr = np.delete(arr, cols_to_drop[name], axis=1)
        new_entries[name] = arr
    return TensorStore(new_entries)


def validate_plan(
    plan: PruningPlan, store: TensorStore, selector: LayerSelector
) -> list[str]:
    """Diagnostics instead of exceptions; an empty list means applicable."""
    diagnostics: list[str] = []
    try:
        layers = dict(select_conv_layers(store, selector))
    except SelectionError as exc:
        return [f"selector: {exc}"]
    for name, lp in plan.per_layer.items():
        if name not in layers:
            diagnostics.append(f"layer '{name}': not among the selected conv layers")
            continue
        n = layers[name].shape[0]
        if lp.n_out != n:
            diagnostics.append(
                f"layer '{name}': plan records {lp.n_out} filters, store has {n}"
            )
        seen: set[int] = set()
        for idx in lp.pruned:
            if idx < 0 or idx >= n:
                diagnostics.append(
                    f"layer '{name}': index {idx} out of range for {n} filters"
                )
            elif idx in seen:
                diagnostics.append(f"layer '{name}': duplicate index {idx}")
            seen.add(idx)
    return diagnostics
