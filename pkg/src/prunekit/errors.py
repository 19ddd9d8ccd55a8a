"""Exception hierarchy shared by all prunekit modules."""


class PruneKitError(Exception):
    """Base class for every error raised by this package."""


class FormatError(PruneKitError):
    """Container file header is malformed or uses an unsupported dtype."""


class CorruptionError(PruneKitError):
    """Declared shapes and payload byte ranges disagree."""


class ValidationError(PruneKitError):
    """Tensor data violates an invariant (e.g. non-finite values)."""


class SelectionError(PruneKitError):
    """Layer selection matched nothing or matched a tensor of wrong rank."""


class ShapeError(PruneKitError):
    """An array does not have the rank or shape an operation requires."""


class CriterionError(PruneKitError):
    """A scoring criterion is undefined for the given input."""


class PlanError(PruneKitError):
    """A pruning plan is inconsistent with its scores or target store."""


class StructuralError(PruneKitError):
    """Hard pruning would break successor-layer shape consistency."""


class ArchError(PruneKitError):
    """An architecture description violates its invariants."""
