"""Conv architecture descriptions, FLOPs/parameter accounting, presets.

FLOPs are counted as multiply-accumulates times a configurable convention
factor (default 2). Drop fractions cancel the factor, so only absolute
counts depend on it.

Pruning reductions per layer follow the two-term rule: pruned output
filters remove their own work, and, where removal is structurally safe,
the matching input channels of every successor. Residual-join layers are
mask-only: by default their zeroed filters still count as reduced work
(a dead filter computes nothing useful), but they never shrink a
successor's input width because the skip connection keeps those channels
alive. Totals are always recomputed from surviving channel counts, never
by summing per-layer formula terms, so overlapping reductions are not
double counted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from .errors import ArchError
from .planner import RateSchedule, prune_count
from .store import LayerSelector

_MODES = ("analytic", "integer")


@dataclass(frozen=True)
class ConvLayerSpec:
    """Geometry of one convolution: channels, kernel, output spatial size.

    ``compaction_safe`` marks layers whose output filters can be removed
    structurally; ``prunable`` marks layers a uniform schedule prunes at all.
    """

    name: str
    n_in: int
    n_out: int
    kernel: int
    out_h: int
    out_w: int
    compaction_safe: bool = True
    prunable: bool = True

    def __post_init__(self) -> None:
        for label in ("n_in", "n_out", "kernel", "out_h", "out_w"):
            if getattr(self, label) < 1:
                raise ArchError(f"layer '{self.name}': {label} must be >= 1")


def layer_flops(spec: ConvLayerSpec, factor: int = 2) -> int:
    """FLOPs of one conv layer: out_h * out_w * n_out * n_in * k^2 * factor."""
    return spec.out_h * spec.out_w * spec.n_out * spec.n_in * spec.kernel**2 * factor


def layer_params(spec: ConvLayerSpec) -> int:
    return spec.n_out * spec.n_in * spec.kernel**2


@dataclass(frozen=True)
class ArchSpec:
    """Ordered conv layers plus the output-to-input successor graph.

    For every edge (a -> b) the successor's input width must equal the
    predecessor's output width, and the graph must be acyclic.
    """

    layers: tuple[ConvLayerSpec, ...]
    successors: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    fixed_macs: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        succ = {str(k): tuple(v) for k, v in dict(self.successors).items()}
        object.__setattr__(self, "successors", MappingProxyType(succ))

        by_name: dict[str, ConvLayerSpec] = {}
        for layer in self.layers:
            if layer.name in by_name:
                raise ArchError(f"duplicate layer name '{layer.name}'")
            by_name[layer.name] = layer
        preds: dict[str, list[str]] = {name: [] for name in by_name}
        for src, targets in succ.items():
            if src not in by_name:
                raise ArchError(f"successor map names unknown layer '{src}'")
            for dst in targets:
                if dst not in by_name:
                    raise ArchError(f"layer '{src}' lists unknown successor '{dst}'")
                if by_name[dst].n_in != by_name[src].n_out:
                    raise ArchError(
                        f"edge {src} -> {dst}: successor takes {by_name[dst].n_in} input "
                        f"channels but predecessor emits {by_name[src].n_out}"
                    )
                preds[dst].append(src)
        object.__setattr__(self, "_by_name", by_name)
        object.__setattr__(
            self, "_predecessors", {k: tuple(v) for k, v in preds.items()}
        )
        self._check_acyclic()

    def _check_acyclic(self) -> None:
        indegree = {name: len(self._predecessors[name]) for name in self._by_name}
        queue = [name for name, deg in indegree.items() if deg == 0]
        visited = 0
        while queue:
            visited += 1
            for dst in self.successors.get(queue.pop(), ()):
                indegree[dst] -= 1
                if indegree[dst] == 0:
                    queue.append(dst)
        if visited != len(self._by_name):
            raise ArchError("successor graph contains a cycle")

    def layer(self, name: str) -> ConvLayerSpec | None:
        return self._by_name.get(name)

    def predecessors(self, name: str) -> tuple[str, ...]:
        return self._predecessors.get(name, ())

    def names(self) -> list[str]:
        return [layer.name for layer in self.layers]

    def prunable_selector(self) -> LayerSelector:
        """Exact-name selector over the prunable layers, in layer order."""
        return LayerSelector(patterns=tuple(l.name for l in self.layers if l.prunable))

    def to_json(self) -> dict:
        return {
            "layers": [
                {
                    "name": l.name,
                    "n_in": l.n_in,
                    "n_out": l.n_out,
                    "k": l.kernel,
                    "out_h": l.out_h,
                    "out_w": l.out_w,
                    "compaction_safe": l.compaction_safe,
                    "prunable": l.prunable,
                }
                for l in self.layers
            ],
            "successors": {k: list(v) for k, v in self.successors.items()},
            "fixed_flops": self.fixed_macs,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ArchSpec":
        try:
            layers = tuple(
                ConvLayerSpec(
                    name=entry["name"],
                    n_in=int(entry["n_in"]),
                    n_out=int(entry["n_out"]),
                    kernel=int(entry["k"]),
                    out_h=int(entry["out_h"]),
                    out_w=int(entry["out_w"]),
                    compaction_safe=bool(entry.get("compaction_safe", True)),
                    prunable=bool(entry.get("prunable", True)),
                )
                for entry in obj["layers"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ArchError(f"malformed architecture JSON: {exc}") from exc
        successors = {k: tuple(v) for k, v in obj.get("successors", {}).items()}
        return cls(
            layers=layers,
            successors=successors,
            fixed_macs=int(obj.get("fixed_flops", 0)),
        )

    @classmethod
    def load(cls, path) -> "ArchSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class FlopsReport:
    """Base vs. remaining FLOPs for a schedule applied to an architecture.

    ``total_pruned`` is the work left after pruning; per-layer entries are
    (base, reduced) pairs whose reductions sum to the total reduction.
    """

    total_base: float
    total_pruned: float
    drop_fraction: float
    per_layer: Mapping[str, tuple[float, float]]

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_layer", MappingProxyType(dict(self.per_layer)))

    def to_json(self) -> dict:
        return {
            "total_base": self.total_base,
            "total_pruned": self.total_pruned,
            "drop_fraction": self.drop_fraction,
            "per_layer": {
                name: {"base": base, "reduced": reduced}
                for name, (base, reduced) in self.per_layer.items()
            },
        }


def _check_mode(mode: str) -> str:
    if mode not in _MODES:
        raise ArchError(f"mode must be one of {_MODES}, got {mode!r}")
    return mode


def _pruned_outputs(arch: ArchSpec, schedule: RateSchedule, mode: str) -> dict[str, float]:
    unknown = set(schedule.overrides) - set(arch.names())
    if unknown:
        raise ArchError(f"schedule names unknown layers: {sorted(unknown)}")
    pruned: dict[str, float] = {}
    for layer in arch.layers:
        rate = schedule.rate_for(layer.name) if layer.prunable else 0.0
        if mode == "integer":
            pruned[layer.name] = prune_count(layer.n_out, rate)
        else:
            pruned[layer.name] = layer.n_out * rate
    return pruned


def _survivors(
    arch: ArchSpec, schedule: RateSchedule, mode: str, structural_only: bool
) -> dict[str, tuple[float, float]]:
    """Per layer: (surviving output channels, surviving input channels)."""
    pruned = _pruned_outputs(arch, schedule, mode)
    survivors: dict[str, tuple[float, float]] = {}
    for layer in arch.layers:
        own = pruned[layer.name]
        if structural_only and not layer.compaction_safe:
            own = 0
        preds = arch.predecessors(layer.name)
        if preds:
            # A channel leaves a layer's input only when removed from every
            # predecessor; with residual joins mask-only, this is 0 there.
            in_removed = min(
                pruned[p] if arch.layer(p).compaction_safe else 0 for p in preds
            )
        else:
            in_removed = 0
        survivors[layer.name] = (layer.n_out - own, layer.n_in - in_removed)
    return survivors


def flops_drop(
    arch: ArchSpec,
    schedule: RateSchedule,
    mode: str = "analytic",
    factor: int = 2,
    structural_only: bool = False,
    include_fixed: bool = False,
) -> FlopsReport:
    """FLOPs accounting for a rate schedule.

    ``integer`` mode replaces ``n_out * rate`` with ``prune_count`` so channel
    counts are whole numbers; ``analytic`` keeps the real product.
    ``include_fixed`` adds the architecture's non-conv work (fully connected
    head) to base and remaining totals for absolute-count comparisons.
    """
    _check_mode(mode)
    survivors = _survivors(arch, schedule, mode, structural_only)
    per_layer: dict[str, tuple[float, float]] = {}
    total_base = 0
    total_remaining = 0
    for layer in arch.layers:
        base = layer_flops(layer, factor)
        out_surv, in_surv = survivors[layer.name]
        remaining = layer.out_h * layer.out_w * layer.kernel**2 * factor * out_surv * in_surv
        per_layer[layer.name] = (base, base - remaining)
        total_base += base
        total_remaining += remaining
    if include_fixed:
        total_base += arch.fixed_macs * factor
        total_remaining += arch.fixed_macs * factor
    drop = (total_base - total_remaining) / total_base if total_base else 0.0
    return FlopsReport(
        total_base=total_base,
        total_pruned=total_remaining,
        drop_fraction=drop,
        per_layer=per_layer,
    )


def params_drop(
    arch: ArchSpec,
    schedule: RateSchedule,
    mode: str = "analytic",
    structural_only: bool = False,
) -> FlopsReport:
    """Parameter-count analogue of flops_drop (spatial size plays no role)."""
    _check_mode(mode)
    survivors = _survivors(arch, schedule, mode, structural_only)
    per_layer: dict[str, tuple[float, float]] = {}
    total_base = 0
    total_remaining = 0
    for layer in arch.layers:
        base = layer_params(layer)
        out_surv, in_surv = survivors[layer.name]
        remaining = layer.kernel**2 * out_surv * in_surv
        per_layer[layer.name] = (base, base - remaining)
        total_base += base
        total_remaining += remaining
    drop = (total_base - total_remaining) / total_base if total_base else 0.0
    return FlopsReport(
        total_base=total_base,
        total_pruned=total_remaining,
        drop_fraction=drop,
        per_layer=per_layer,
    )


def formula_reduction(
    arch: ArchSpec,
    layer_name: str,
    rate: float,
    mode: str = "analytic",
    factor: int = 2,
) -> float:
    """Two-term reduction for pruning a single layer at ``rate``.

    Own term: out_h * out_w * (n_out * rate) * k^2 * n_in. Successor term,
    per successor: its spatial area times its own output width and kernel,
    times the pruned channel count. Assumes structural removal; when several
    layers are pruned at once the terms overlap, so totals must come from
    flops_drop instead.
    """
    _check_mode(mode)
    layer = arch.layer(layer_name)
    if layer is None:
        raise ArchError(f"unknown layer '{layer_name}'")
    if not (0.0 <= rate <= 1.0):
        raise ArchError(f"rate must be in [0, 1], got {rate}")
    pruned = prune_count(layer.n_out, rate) if mode == "integer" else layer.n_out * rate
    own = layer.out_h * layer.out_w * pruned * layer.kernel**2 * layer.n_in
    succ_term = 0.0
    for name in arch.successors.get(layer_name, ()):
        succ = arch.layer(name)
        succ_term += succ.out_h * succ.out_w * succ.n_out * succ.kernel**2 * pruned
    return (own + succ_term) * factor


def rate_sweep(
    arch: ArchSpec,
    rates: Iterable[float],
    mode: str = "analytic",
    factor: int = 2,
) -> dict[float, float]:
    """Uniform-rate drop fractions; monotone nondecreasing in the rate."""
    _check_mode(mode)
    out: dict[float, float] = {}
    for rate in rates:
        schedule = RateSchedule(default_rate=float(rate))
        out[float(rate)] = flops_drop(arch, schedule, mode=mode, factor=factor).drop_fraction
    return out


def recover_rate(
    arch: ArchSpec,
    target_drop: float,
    lo: float = 0.05,
    hi: float = 0.75,
    mode: str = "analytic",
    factor: int = 2,
    iters: int = 50,
) -> tuple[float, float]:
    """Find the uniform rate in [lo, hi] whose drop fraction best matches.

    Bisection over the monotone drop curve; returns (rate, drop_fraction).
    Targets outside the attainable span clamp to the nearer endpoint.
    """
    _check_mode(mode)
    drop_lo = rate_sweep(arch, [lo], mode=mode, factor=factor)[lo]
    drop_hi = rate_sweep(arch, [hi], mode=mode, factor=factor)[hi]
    if target_drop <= drop_lo:
        return lo, drop_lo
    if target_drop >= drop_hi:
        return hi, drop_hi
    a, b = lo, hi
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if rate_sweep(arch, [mid], mode=mode, factor=factor)[mid] < target_drop:
            a = mid
        else:
            b = mid
    rate = 0.5 * (a + b)
    return rate, rate_sweep(arch, [rate], mode=mode, factor=factor)[rate]


# ---------------------------------------------------------------------------
# Presets: standard ResNet geometries with residual joins marked mask-only.

_CIFAR_BLOCKS = {"resnet20": 3, "resnet32": 5, "resnet56": 9, "resnet110": 18}
_IMAGENET_BASIC = {"resnet18": (2, 2, 2, 2), "resnet34": (3, 4, 6, 3)}
_IMAGENET_BOTTLENECK = {"resnet50": (3, 4, 6, 3)}

PRESET_NAMES = tuple(
    sorted({**_CIFAR_BLOCKS, **_IMAGENET_BASIC, **_IMAGENET_BOTTLENECK})
)


def preset(
    name: str,
    prune_first_conv: bool = True,
    prune_projections: bool = False,
) -> ArchSpec:
    """Standard ResNet geometry for CIFAR (20/32/56/110) or ImageNet (18/34/50).

    The flags control whether the stem conv and the 1x1 projection
    (downsample) convs participate in pruning; geometry and base FLOPs are
    unaffected. Block-final convs, projections, and stems feeding a residual
    stream are mask-only.
    """
    if name in _CIFAR_BLOCKS:
        n = _CIFAR_BLOCKS[name]
        return _build_basic(
            stem=ConvLayerSpec(
                "conv1.weight", 3, 16, 3, 32, 32,
                compaction_safe=False, prunable=prune_first_conv,
            ),
            stage_widths=(16, 32, 64),
            stage_spatial=(32, 16, 8),
            stage_blocks=(n, n, n),
            prune_projections=prune_projections,
            fixed_macs=64 * 10,
        )
    if name in _IMAGENET_BASIC:
        blocks = _IMAGENET_BASIC[name]
        return _build_basic(
            stem=ConvLayerSpec(
                "conv1.weight", 3, 64, 7, 112, 112,
                compaction_safe=False, prunable=prune_first_conv,
            ),
            stage_widths=(64, 128, 256, 512),
            stage_spatial=(56, 28, 14, 7),
            stage_blocks=blocks,
            prune_projections=prune_projections,
            fixed_macs=512 * 1000,
        )
    if name in _IMAGENET_BOTTLENECK:
        return _build_bottleneck(
            stage_blocks=_IMAGENET_BOTTLENECK[name],
            prune_first_conv=prune_first_conv,
            prune_projections=prune_projections,
        )
    raise ArchError(f"unknown preset '{name}'; known: {', '.join(PRESET_NAMES)}")


def _build_basic(
    stem: ConvLayerSpec,
    stage_widths: Sequence[int],
    stage_spatial: Sequence[int],
    stage_blocks: Sequence[int],
    prune_projections: bool,
    fixed_macs: int,
) -> ArchSpec:
    layers = [stem]
    successors: dict[str, list[str]] = {}
    # Convs whose outputs were most recently joined into the residual stream.
    stream = [stem.name]
    stream_width = stem.n_out
    for s, (width, spatial, blocks) in enumerate(
        zip(stage_widths, stage_spatial, stage_blocks), start=1
    ):
        for b in range(blocks):
            c1 = f"layer{s}.{b}.conv1.weight"
            c2 = f"layer{s}.{b}.conv2.weight"
            layers.append(
                ConvLayerSpec(c1, stream_width, width, 3, spatial, spatial,
                              compaction_safe=True)
            )
            layers.append(
                ConvLayerSpec(c2, width, width, 3, spatial, spatial,
                              compaction_safe=False)
            )
            successors.setdefault(c1, []).append(c2)
            for src in stream:
                successors.setdefault(src, []).append(c1)
            joined = [c2]
            if b == 0 and stream_width != width:
                proj = f"layer{s}.0.downsample.0.weight"
                layers.append(
                    ConvLayerSpec(proj, stream_width, width, 1, spatial, spatial,
                                  compaction_safe=False, prunable=prune_projections)
                )
                for src in stream:
                    successors.setdefault(src, []).append(proj)
                joined.append(proj)
            stream = joined
            stream_width = width
    return ArchSpec(
        layers=tuple(layers),
        successors={k: tuple(v) for k, v in successors.items()},
        fixed_macs=fixed_macs,
    )


def _build_bottleneck(
    stage_blocks: Sequence[int],
    prune_first_conv: bool,
    prune_projections: bool,
) -> ArchSpec:
    # torchvision geometry: the 3x3 conv carries the stage's stride, so the
    # 1x1 reducer of a downsampling block still runs at the previous spatial
    # size.
    base_widths = (64, 128, 256, 512)
    stage_spatial = (56, 28, 14, 7)
    expansion = 4
    # The stage-1 block has a projection, so the stem feeds only convs and
    # can be compacted structurally.
    stem = ConvLayerSpec(
        "conv1.weight", 3, 64, 7, 112, 112,
        compaction_safe=True, prunable=prune_first_conv,
    )
    layers = [stem]
    successors: dict[str, list[str]] = {}
    stream = [stem.name]
    stream_width = stem.n_out
    prev_spatial = 56  # after the stem's max pool
    for s, (width, spatial, blocks) in enumerate(
        zip(base_widths, stage_spatial, stage_blocks), start=1
    ):
        out_width = width * expansion
        for b in range(blocks):
            c1 = f"layer{s}.{b}.conv1.weight"
            c2 = f"layer{s}.{b}.conv2.weight"
            c3 = f"layer{s}.{b}.conv3.weight"
            c1_spatial = prev_spatial if b == 0 else spatial
            layers.append(
                ConvLayerSpec(c1, stream_width, width, 1, c1_spatial, c1_spatial,
                              compaction_safe=True)
            )
            layers.append(
                ConvLayerSpec(c2, width, width, 3, spatial, spatial,
                              compaction_safe=True)
            )
            layers.append(
                ConvLayerSpec(c3, width, out_width, 1, spatial, spatial,
                              compaction_safe=False)
            )
            successors.setdefault(c1, []).append(c2)
            successors.setdefault(c2, []).append(c3)
            for src in stream:
                successors.setdefault(src, []).append(c1)
            joined = [c3]
            if b == 0:
                proj = f"layer{s}.0.downsample.0.weight"
                layers.append(
                    ConvLayerSpec(proj, stream_width, out_width, 1, spatial, spatial,
                                  compaction_safe=False, prunable=prune_projections)
                )
                for src in stream:
                    successors.setdefault(src, []).append(proj)
                joined.append(proj)
            stream = joined
            stream_width = out_width
        prev_spatial = spatial
    return ArchSpec(
        layers=tuple(layers),
        successors={k: tuple(v) for k, v in successors.items()},
        fixed_macs=512 * expansion * 1000,
    )
