"""Filter-pruning analysis toolkit.

Scores convolution filters under norm-, relationship-, and hybrid-family
criteria, builds deterministic pruning plans, applies them to weight
stores (soft zeroing or hard compaction), and accounts the FLOPs and
parameter reductions.
"""

from .errors import (
    ArchError,
    CorruptionError,
    CriterionError,
    FormatError,
    PlanError,
    PruneKitError,
    SelectionError,
    ShapeError,
    StructuralError,
    ValidationError,
)
from .store import LayerSelector, TensorStore, load_store, save_store, select_conv_layers
from .criteria import (
    CriterionKind,
    Family,
    FilterMatrix,
    NormKind,
    RankStabilityReport,
    ScoreReport,
    SimilarityKind,
    filter_norms,
    flatten,
    importance_order,
    perturbation_probe,
    score,
    similarity,
)
from .planner import (
    LayerPlan,
    PruningPlan,
    RateSchedule,
    TIE_RULE,
    apply_hard,
    apply_soft,
    build_plan,
    prune_count,
    validate_plan,
)
from .archmodel import (
    ArchSpec,
    ConvLayerSpec,
    FlopsReport,
    PRESET_NAMES,
    flops_drop,
    formula_reduction,
    layer_flops,
    layer_params,
    params_drop,
    preset,
    rate_sweep,
    recover_rate,
)

__version__ = "0.1.0"

__all__ = [
    "ArchError",
    "ArchSpec",
    "ConvLayerSpec",
    "CorruptionError",
    "CriterionError",
    "CriterionKind",
    "Family",
    "FilterMatrix",
    "FlopsReport",
    "FormatError",
    "LayerPlan",
    "LayerSelector",
    "NormKind",
    "PRESET_NAMES",
    "PlanError",
    "PruneKitError",
    "PruningPlan",
    "RankStabilityReport",
    "RateSchedule",
    "ScoreReport",
    "SelectionError",
    "ShapeError",
    "SimilarityKind",
    "StructuralError",
    "TIE_RULE",
    "TensorStore",
    "ValidationError",
    "apply_hard",
    "apply_soft",
    "build_plan",
    "filter_norms",
    "flatten",
    "flops_drop",
    "formula_reduction",
    "importance_order",
    "layer_flops",
    "layer_params",
    "load_store",
    "params_drop",
    "perturbation_probe",
    "preset",
    "prune_count",
    "rate_sweep",
    "recover_rate",
    "save_store",
    "score",
    "select_conv_layers",
    "similarity",
    "validate_plan",
]
