"""Apply a pruning-plan JSON to a live checkpoint in soft (zeroing) mode."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from .errors import ApplyError, BridgeError
from .export import load_state_dict
from .namemap import NameMap


def apply_plan_to_checkpoint(
    checkpoint_path: str | Path,
    plan_path: str | Path,
    name_map: NameMap,
    out_path: str | Path,
) -> int:
    """Zero the planned filter rows; every other parameter is untouched.

    Returns the number of zeroed rows. The checkpoint wrapper (epoch
    counters and the like) is preserved as loaded.
    """
    wrapper = torch.load(checkpoint_path, map_location="cpu", weights_only=True)
    state = wrapper["state_dict"] if (
        isinstance(wrapper, dict) and isinstance(wrapper.get("state_dict"), dict)
    ) else wrapper
    if not isinstance(state, dict) or not state:
        raise ApplyError(f"{checkpoint_path}: checkpoint does not hold a state dict")

    with open(plan_path, "r", encoding="utf-8") as fh:
        plan = json.load(fh)
    layers = plan.get("layers")
    if not isinstance(layers, dict):
        raise ApplyError(f"{plan_path}: plan JSON must contain a 'layers' object")

    to_framework = name_map.to_framework()
    zeroed = 0
    for neutral_name, entry in layers.items():
        if neutral_name not in to_framework:
            raise ApplyError(f"plan layer '{neutral_name}' is not in the name map")
        framework_name = to_framework[neutral_name]
        if framework_name not in state:
            raise ApplyError(f"checkpoint has no parameter '{framework_name}'")
        tensor = state[framework_name]
        pruned = entry.get("pruned", [])
        n_out = entry.get("n_out")
        if tensor.dim() != 4 or tensor.shape[0] != n_out:
            raise ApplyError(
                f"'{framework_name}': plan expects {n_out} filters, "
                f"checkpoint tensor has shape {tuple(tensor.shape)}"
            )
        if len(set(pruned)) != len(pruned) or any(
            i < 0 or i >= tensor.shape[0] for i in pruned
        ):
            raise ApplyError(f"'{framework_name}': invalid pruned indices {pruned}")
        if pruned:
            replaced = tensor.clone()
            replaced[list(pruned)] = 0.0
            state[framework_name] = replaced
            zeroed += len(pruned)
    torch.save(wrapper, out_path)
    return zeroed


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ckpt-apply",
        description="Zero planned filters in a PyTorch checkpoint (soft pruning).",
    )
    parser.add_argument("--checkpoint", required=True, help="torch checkpoint path")
    parser.add_argument("--map", required=True, help="name map JSON: [[framework, neutral], ...]")
    parser.add_argument("--plan", required=True, help="pruning plan JSON")
    parser.add_argument("--out", required=True, help="output checkpoint path")
    args = parser.parse_args(argv)
    try:
        name_map = NameMap.load(args.map)
        zeroed = apply_plan_to_checkpoint(args.checkpoint, args.plan, name_map, args.out)
    except (BridgeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"zeroed {zeroed} filters -> {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
