class BridgeError(Exception):
    """Base class for bridge failures."""


class ExportError(BridgeError):
    """Checkpoint export failed: missing, wrong-rank, or wrong-dtype parameter."""


class ApplyError(BridgeError):
    """Plan application failed: unknown layer or shape/index mismatch."""
