"""Checkpoint bridge: PyTorch state dicts <-> the neutral tensor container.

The bridge talks to the analysis toolkit only through files: it produces
`.st` containers the toolkit loads and consumes the plan JSON the toolkit
writes. No code is shared in either direction.
"""

from .errors import ApplyError, BridgeError, ExportError
from .namemap import NameMap
from .container import read_tensors, write_tensors
from .export import export_checkpoint
from .apply import apply_plan_to_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ApplyError",
    "BridgeError",
    "ExportError",
    "NameMap",
    "apply_plan_to_checkpoint",
    "export_checkpoint",
    "read_tensors",
    "write_tensors",
]
