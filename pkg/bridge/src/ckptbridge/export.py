"""Export mapped conv weights from a PyTorch checkpoint to a container file."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch

from .container import write_tensors
from .errors import BridgeError, ExportError
from .namemap import NameMap


def load_state_dict(path: str | Path) -> dict:
    obj = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(obj, dict) and isinstance(obj.get("state_dict"), dict):
        obj = obj["state_dict"]
    if not isinstance(obj, dict) or not obj:
        raise ExportError(f"{path}: checkpoint does not hold a state dict")
    return obj


def export_checkpoint(
    checkpoint_path: str | Path, name_map: NameMap, out_path: str | Path
) -> None:
    """Write the mapped rank-4 float32 tensors to ``out_path``, bit-exact.

    Non-float32 parameters are rejected rather than cast.
    """
    state = load_state_dict(checkpoint_path)
    exported = {}
    for framework_name, neutral_name in name_map.pairs:
        if framework_name not in state:
            raise ExportError(f"checkpoint has no parameter '{framework_name}'")
        tensor = state[framework_name]
        if not torch.is_tensor(tensor):
            raise ExportError(f"'{framework_name}' is not a tensor")
        if tensor.dtype != torch.float32:
            raise ExportError(
                f"'{framework_name}' has dtype {tensor.dtype}; only float32 is exported"
            )
        if tensor.dim() != 4:
            raise ExportError(
                f"'{framework_name}' has rank {tensor.dim()}; conv weights must be rank 4"
            )
        exported[neutral_name] = tensor.detach().contiguous().numpy()
    write_tensors(out_path, exported)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ckpt-export",
        description="Export mapped conv weights from a PyTorch checkpoint to a .st container.",
    )
    parser.add_argument("--checkpoint", required=True, help="torch checkpoint path")
    parser.add_argument("--map", required=True, help="name map JSON: [[framework, neutral], ...]")
    parser.add_argument("--out", required=True, help="output .st path")
    args = parser.parse_args(argv)
    try:
        name_map = NameMap.load(args.map)
        export_checkpoint(args.checkpoint, name_map, args.out)
    except (BridgeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"exported {len(name_map.pairs)} tensors -> {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
