"""Command-line interface: score, plan, apply, flops, compare.

All outputs are JSON files written atomically (temp file + rename) plus a
terse summary on stdout. Exit codes: 0 success, 1 data/validation error,
2 usage error. Nothing in the pipeline is stochastic, so identical inputs
produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .archmodel import (
    ArchSpec,
    PRESET_NAMES,
    flops_drop,
    preset,
    recover_rate,
)
from .criteria import CriterionKind, Family, NormKind, SimilarityKind, flatten, score
from .errors import PlanError, PruneKitError, SelectionError
from .planner import (
    PruningPlan,
    RateSchedule,
    apply_hard,
    apply_soft,
    build_plan,
    prune_count,
    validate_plan,
)
from .store import LayerSelector, TensorStore, load_store, save_store, select_conv_layers


@dataclass
class RunConfig:
    """Merged flag/config-file options for one command invocation."""

    store_path: Path | None = None
    selector_spec: str | None = None
    criterion: CriterionKind | None = None
    schedule: RateSchedule | None = None
    arch: ArchSpec | None = None
    plan_path: Path | None = None
    out: Path | None = None
    apply_mode: str = "soft"
    flops_mode: str = "analytic"
    flops_factor: int = 2
    target_drop: float | None = None
    criteria: tuple[CriterionKind, ...] = ()


def _write_atomic_bytes(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: Path, obj) -> None:
    _write_atomic_bytes(path, (json.dumps(obj, indent=2) + "\n").encode("utf-8"))


def _load_json(path: str | Path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _resolve_selector(spec: str | None, store: TensorStore) -> LayerSelector:
    """A selector from a JSON config path, inline patterns, or the default.

    The default (no ``--layers``) selects every rank-4 tensor in the store,
    in lexicographic order.
    """
    if spec is None:
        names = tuple(name for name, tensor in store.items() if tensor.ndim == 4)
        if not names:
            raise SelectionError("store contains no rank-4 tensors to select")
        return LayerSelector(patterns=names)
    if Path(spec).is_file():
        return LayerSelector.from_config(_load_json(spec))
    return LayerSelector(patterns=tuple(p.strip() for p in spec.split(",") if p.strip()))


def _resolve_schedule(rate: float | None, overrides_spec: str | None) -> RateSchedule:
    overrides = {}
    if overrides_spec is not None:
        if overrides_spec.lstrip().startswith("{"):
            overrides = json.loads(overrides_spec)
        else:
            overrides = _load_json(overrides_spec)
        if not isinstance(overrides, dict):
            raise PlanError("rate overrides must be a JSON object of layer -> rate")
    return RateSchedule(default_rate=rate if rate is not None else 0.0, overrides=overrides)


def _resolve_arch(args) -> ArchSpec | None:
    arch_path = getattr(args, "arch", None)
    preset_name = getattr(args, "preset", None)
    if arch_path and preset_name:
        _usage_error("give exactly one of --arch or --preset")
    if arch_path:
        return ArchSpec.load(arch_path)
    if preset_name:
        return preset(
            preset_name,
            prune_first_conv=_first(getattr(args, "prune_first_conv", None), True),
            prune_projections=_first(getattr(args, "prune_projections", None), False),
        )
    return None


def _first(*values):
    for value in values:
        if value is not None:
            return value
    return None


def _usage_error(message: str) -> None:
    print(f"usage error: {message}", file=sys.stderr)
    raise SystemExit(2)


def _score_reports(store: TensorStore, selector: LayerSelector, kind: CriterionKind):
    return [
        score(flatten(tensor), kind, layer_name=name)
        for name, tensor in select_conv_layers(store, selector)
    ]


# ---------------------------------------------------------------------------
# Commands


def cmd_score(cfg: RunConfig) -> int:
    store = load_store(cfg.store_path)
    selector = _resolve_selector(cfg.selector_spec, store)
    reports = _score_reports(store, selector, cfg.criterion)
    _write_json(cfg.out, [r.to_json() for r in reports])
    print(f"scored {len(reports)} layers with {cfg.criterion.label()} -> {cfg.out}")
    return 0


def cmd_plan(cfg: RunConfig) -> int:
    store = load_store(cfg.store_path)
    selector = _resolve_selector(cfg.selector_spec, store)
    reports = _score_reports(store, selector, cfg.criterion)
    plan = build_plan(reports, cfg.schedule)
    _write_atomic_bytes(cfg.out, plan.to_json_bytes())
    total = sum(lp.n_out for lp in plan.per_layer.values())
    print(
        f"planned {plan.total_pruned}/{total} filters across "
        f"{len(plan.per_layer)} layers -> {cfg.out}"
    )
    return 0


def cmd_apply(cfg: RunConfig) -> int:
    store = load_store(cfg.store_path)
    plan = PruningPlan.from_json(_load_json(cfg.plan_path))
    selector = _resolve_selector(cfg.selector_spec, store)
    diagnostics = validate_plan(plan, store, selector)
    if diagnostics:
        for diag in diagnostics:
            print(f"plan check: {diag}", file=sys.stderr)
        return 1
    if cfg.apply_mode == "hard":
        if cfg.arch is None:
            _usage_error("hard apply needs --arch or --preset")
        pruned = apply_hard(store, plan, cfg.arch)
    else:
        pruned = apply_soft(store, plan, selector)
    save_store(pruned, cfg.out)
    print(f"applied {cfg.apply_mode} plan ({plan.total_pruned} filters) -> {cfg.out}")
    return 0


def cmd_flops(cfg: RunConfig) -> int:
    if cfg.arch is None:
        _usage_error("flops needs --arch or --preset")
    extras: dict = {"mode": cfg.flops_mode, "factor": cfg.flops_factor}
    if cfg.target_drop is not None:
        rate, _ = recover_rate(
            cfg.arch,
            cfg.target_drop / 100.0,
            mode=cfg.flops_mode,
            factor=cfg.flops_factor,
        )
        schedule = RateSchedule(default_rate=rate)
        extras["recovered_rate"] = rate
        print(f"rate {rate:.4f}")
    else:
        schedule = cfg.schedule
    report = flops_drop(cfg.arch, schedule, mode=cfg.flops_mode, factor=cfg.flops_factor)
    if cfg.out is not None:
        _write_json(cfg.out, {**report.to_json(), **extras})
    print(f"{report.drop_fraction * 100.0:.1f}")
    return 0


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    ranks[order] = np.arange(1, len(values) + 1, dtype=np.float64)
    for value in np.unique(values):
        mask = values == value
        if mask.sum() > 1:
            ranks[mask] = ranks[mask].mean()
    return ranks


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Rank correlation with average ranks for ties."""
    ra = _average_ranks(np.asarray(a, dtype=np.float64))
    rb = _average_ranks(np.asarray(b, dtype=np.float64))
    ra -= ra.mean()
    rb -= rb.mean()
    denom = float(np.sqrt((ra**2).sum() * (rb**2).sum()))
    if denom == 0.0:
        # Constant vectors carry no ranking; identical constants agree fully.
        return 1.0 if (ra == 0).all() and (rb == 0).all() else 0.0
    return float((ra * rb).sum() / denom)


def cmd_compare(cfg: RunConfig) -> int:
    store = load_store(cfg.store_path)
    selector = _resolve_selector(cfg.selector_spec, store)
    layers = select_conv_layers(store, selector)
    rate = cfg.schedule.default_rate
    labels = [kind.label() for kind in cfg.criteria]

    per_layer = []
    pair_sums: dict[str, list[float]] = {}
    for name, tensor in layers:
        fm = flatten(tensor)
        reports = {
            kind.label(): score(fm, kind, layer_name=name) for kind in cfg.criteria
        }
        pruned = {}
        for label, report in reports.items():
            k = prune_count(report.scores.shape[0], cfg.schedule.rate_for(name))
            order = np.lexsort((np.arange(report.scores.shape[0]), report.scores))
            pruned[label] = sorted(int(i) for i in order[:k])
        pairs = {}
        for i in range(len(labels)):
            for j in range(i + 1, len(labels)):
                a, b = labels[i], labels[j]
                key = f"{a}|{b}"
                set_a, set_b = set(pruned[a]), set(pruned[b])
                overlap = len(set_a & set_b) / len(set_a) if set_a else 1.0
                rho = spearman(reports[a].scores, reports[b].scores)
                pairs[key] = {"overlap": overlap, "spearman": rho}
                pair_sums.setdefault(key, []).append(overlap)
                pair_sums.setdefault(key + "#rho", []).append(rho)
        per_layer.append(
            {
                "layer": name,
                "scores": {label: [float(v) for v in reports[label].scores] for label in labels},
                "pruned": pruned,
                "pairs": pairs,
            }
        )

    summary = {}
    for i in range(len(labels)):
        for j in range(i + 1, len(labels)):
            key = f"{labels[i]}|{labels[j]}"
            summary[key] = {
                "mean_overlap": float(np.mean(pair_sums[key])),
                "mean_spearman": float(np.mean(pair_sums[key + "#rho"])),
            }
    _write_json(
        cfg.out,
        {"criteria": labels, "rate": rate, "layers": per_layer, "agreement": summary},
    )
    for key, stats in summary.items():
        print(
            f"{key.replace('|', ' vs ')}: overlap {stats['mean_overlap']:.3f} "
            f"spearman {stats['mean_spearman']:.3f}"
        )
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def _add_common(parser: argparse.ArgumentParser, *, need_store: bool) -> None:
    parser.add_argument("--config", help="JSON file of defaults; flags override it")
    parser.add_argument("--out", help="output file path")
    if need_store:
        parser.add_argument("--store", help="tensor container (.st) file")
        parser.add_argument("--layers", help="selection config JSON or comma-separated patterns")


def _add_criterion(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--criterion", choices=[f.value for f in Family], help="scoring criterion family"
    )
    parser.add_argument("--norm", choices=[n.value for n in NormKind], help="norm variant")
    parser.add_argument(
        "--similarity",
        choices=[s.value for s in SimilarityKind],
        help="similarity variant",
    )


def _add_rates(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--rate", type=float, help="uniform pruning rate in [0, 1]")
    parser.add_argument(
        "--rate-overrides",
        dest="rate_overrides",
        help="per-layer rates: JSON file path or inline JSON object",
    )


def _add_arch(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--arch", help="architecture JSON file")
    parser.add_argument("--preset", choices=list(PRESET_NAMES), help="built-in architecture")
    parser.add_argument(
        "--prune-first-conv",
        dest="prune_first_conv",
        action=argparse.BooleanOptionalAction,
        help="include the stem conv in uniform pruning (default: yes)",
    )
    parser.add_argument(
        "--prune-projections",
        dest="prune_projections",
        action=argparse.BooleanOptionalAction,
        help="include projection convs in uniform pruning (default: no)",
    )
    parser.add_argument(
        "--flops-factor",
        dest="flops_factor",
        type=int,
        choices=(1, 2),
        help="FLOPs per multiply-accumulate (default 2)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prunekit",
        description="Filter-pruning analysis: score filters, plan and apply pruning, count FLOPs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_score = sub.add_parser("score", help="write per-layer importance scores")
    _add_common(p_score, need_store=True)
    _add_criterion(p_score)
    p_score.set_defaults(func=_run_score)

    p_plan = sub.add_parser("plan", help="build a pruning plan from scores and rates")
    _add_common(p_plan, need_store=True)
    _add_criterion(p_plan)
    _add_rates(p_plan)
    p_plan.set_defaults(func=_run_plan)

    p_apply = sub.add_parser("apply", help="apply a plan to a store")
    _add_common(p_apply, need_store=True)
    p_apply.add_argument("--plan", required=True, help="plan JSON file")
    p_apply.add_argument("--mode", choices=("soft", "hard"), help="soft zeroing or hard removal")
    _add_arch(p_apply)
    p_apply.set_defaults(func=_run_apply)

    p_flops = sub.add_parser("flops", help="FLOPs drop for a schedule or target")
    _add_common(p_flops, need_store=False)
    _add_rates(p_flops)
    _add_arch(p_flops)
    p_flops.add_argument(
        "--flops-mode",
        dest="flops_mode",
        choices=("analytic", "integer"),
        help="channel-count arithmetic (default analytic)",
    )
    p_flops.add_argument(
        "--target-drop",
        dest="target_drop",
        type=float,
        help="recover the uniform rate matching this drop percentage",
    )
    p_flops.set_defaults(func=_run_flops)

    p_cmp = sub.add_parser("compare", help="rank agreement between criteria")
    _add_common(p_cmp, need_store=True)
    _add_rates(p_cmp)
    p_cmp.add_argument(
        "--criteria",
        help="comma-separated criterion tokens, e.g. whc,hc,cosine_sum or whc:l1",
    )
    p_cmp.set_defaults(func=_run_compare)
    return parser


def _merge_config_file(args: argparse.Namespace) -> None:
    if getattr(args, "config", None) is None:
        return
    config = _load_json(args.config)
    if not isinstance(config, dict):
        raise PlanError("config file must hold a JSON object")
    for key, value in config.items():
        attr = key.replace("-", "_")
        if getattr(args, attr, None) is None and hasattr(args, attr):
            setattr(args, attr, value)


def _require(args, name: str, flag: str):
    value = getattr(args, name, None)
    if value is None:
        _usage_error(f"{flag} is required")
    return value


def _criterion_from(args) -> CriterionKind:
    family = Family(_require(args, "criterion", "--criterion"))
    return CriterionKind(
        family,
        norm_kind=NormKind(_first(args.norm, "l2")),
        similarity_kind=SimilarityKind(_first(args.similarity, "cosine")),
    )


def _run_score(args) -> int:
    cfg = RunConfig(
        store_path=Path(_require(args, "store", "--store")),
        selector_spec=args.layers,
        criterion=_criterion_from(args),
        out=Path(_require(args, "out", "--out")),
    )
    return cmd_score(cfg)


def _run_plan(args) -> int:
    cfg = RunConfig(
        store_path=Path(_require(args, "store", "--store")),
        selector_spec=args.layers,
        criterion=_criterion_from(args),
        schedule=_resolve_schedule(args.rate, args.rate_overrides),
        out=Path(_require(args, "out", "--out")),
    )
    return cmd_plan(cfg)


def _run_apply(args) -> int:
    cfg = RunConfig(
        store_path=Path(_require(args, "store", "--store")),
        selector_spec=args.layers,
        plan_path=Path(args.plan),
        apply_mode=_first(args.mode, "soft"),
        arch=_resolve_arch(args),
        out=Path(_require(args, "out", "--out")),
    )
    return cmd_apply(cfg)


def _run_flops(args) -> int:
    cfg = RunConfig(
        arch=_resolve_arch(args),
        schedule=_resolve_schedule(args.rate, args.rate_overrides),
        flops_mode=_first(args.flops_mode, "analytic"),
        flops_factor=_first(args.flops_factor, 2),
        target_drop=args.target_drop,
        out=Path(args.out) if args.out else None,
    )
    return cmd_flops(cfg)


def _run_compare(args) -> int:
    tokens = [t for t in (args.criteria or "").split(",") if t.strip()]
    if len(tokens) < 2:
        _usage_error("--criteria needs at least two comma-separated criteria")
    cfg = RunConfig(
        store_path=Path(_require(args, "store", "--store")),
        selector_spec=args.layers,
        schedule=_resolve_schedule(args.rate, args.rate_overrides),
        criteria=tuple(CriterionKind.parse(t) for t in tokens),
        out=Path(_require(args, "out", "--out")),
    )
    return cmd_compare(cfg)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _merge_config_file(args)
        return args.func(args)
    except PruneKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
