"""Per-filter importance scoring for convolution layers.

A layer's filters are flattened into a row matrix and scored under one of
six criterion families. All families share the convention that a HIGHER
score marks a MORE important filter; pruning always removes the lowest
scores.

Families, with ``n_i`` the chosen norm of row ``i`` and ``S`` the pairwise
similarity matrix (cosine by default):

- ``norm``        score_i = n_i
- ``cosine_sum``  score_i = -sum_{j != i} S[i][j]  (most-orthogonal wins)
- ``fpgm``        score_i = sum_{j != i} ||row_i - row_j||_2
- ``dm``          score_i = sum_{j != i} (1 - |S[i][j]|)
- ``hc``          score_i = n_i * sum_{j != i} (1 - |S[i][j]|)
- ``whc``         score_i = n_i * sum_{j != i} n_j * (1 - |S[i][j]|)

``dm`` treats antiparallel filters as redundant pairs (their term is 0),
which distance- and angle-based criteria reward instead; ``whc`` downweights
dissimilarity evidence coming from small-norm filters, which a tiny additive
perturbation can flip between orthogonal and antiparallel.

Similarity accumulates in float64 even though stores hold float32. The
reduction order is fixed (one BLAS gemm on normalized rows, then an explicit
symmetrization), so results are bitwise reproducible within an environment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .errors import CriterionError, ShapeError, ValidationError

# Rows with a (possibly centered) norm below this are degenerate: their
# similarity to anything is defined as 0 and their self-similarity as 1.
EPS_ZERO = 1e-12


class Family(str, Enum):
    NORM = "norm"
    COSINE_SUM = "cosine_sum"
    FPGM = "fpgm"
    DM = "dm"
    HC = "hc"
    WHC = "whc"


class NormKind(str, Enum):
    L1 = "l1"
    L2 = "l2"


class SimilarityKind(str, Enum):
    COSINE = "cosine"
    CORRELATION = "correlation"


_NORM_FAMILIES = frozenset({Family.NORM, Family.HC, Family.WHC})
_SIMILARITY_FAMILIES = frozenset({Family.COSINE_SUM, Family.DM, Family.HC, Family.WHC})


@dataclass(frozen=True)
class CriterionKind:
    """A criterion family plus its norm / similarity variant.

    Fields that a family does not use are pinned to their defaults
    (``l2`` / ``cosine``) so that equal behavior compares equal.
    """

    family: Family
    norm_kind: NormKind = NormKind.L2
    similarity_kind: SimilarityKind = SimilarityKind.COSINE

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "norm_kind", NormKind(self.norm_kind))
        object.__setattr__(self, "similarity_kind", SimilarityKind(self.similarity_kind))
        if self.family not in _NORM_FAMILIES:
            object.__setattr__(self, "norm_kind", NormKind.L2)
        if self.family not in _SIMILARITY_FAMILIES:
            object.__setattr__(self, "similarity_kind", SimilarityKind.COSINE)

    @classmethod
    def parse(cls, token: str) -> "CriterionKind":
        """Parse ``family[:norm][:similarity]``, e.g. ``whc:l1:correlation``."""
        parts = token.strip().lower().split(":")
        try:
            family = Family(parts[0])
        except ValueError:
            raise CriterionError(f"unknown criterion family '{parts[0]}'") from None
        norm = NormKind.L2
        sim = SimilarityKind.COSINE
        for part in parts[1:]:
            if part in (n.value for n in NormKind):
                norm = NormKind(part)
            elif part in (s.value for s in SimilarityKind):
                sim = SimilarityKind(part)
            else:
                raise CriterionError(f"unknown criterion variant '{part}' in '{token}'")
        return cls(family, norm, sim)

    def label(self) -> str:
        parts = [self.family.value]
        if self.norm_kind is not NormKind.L2:
            parts.append(self.norm_kind.value)
        if self.similarity_kind is not SimilarityKind.COSINE:
            parts.append(self.similarity_kind.value)
        return ":".join(parts)

    def to_json(self) -> dict:
        return {
            "family": self.family.value,
            "norm": self.norm_kind.value,
            "similarity": self.similarity_kind.value,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "CriterionKind":
        return cls(
            family=obj["family"],
            norm_kind=obj.get("norm", "l2"),
            similarity_kind=obj.get("similarity", "cosine"),
        )


@dataclass(frozen=True)
class FilterMatrix:
    """One layer's filters as a rows x cols float64 matrix.

    Row ``i`` is filter ``i`` flattened input-channel major, then kernel row,
    then kernel column. All entries must be finite.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"filter matrix must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"filter matrix needs at least one row and column, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("filter matrix contains non-finite values")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


def flatten(weight: np.ndarray) -> FilterMatrix:
    """Flatten a rank-4 conv weight [n_out, n_in, k, k] into a FilterMatrix.

    Uses C order, so row ``i`` enumerates ``weight[i]`` input-channel major,
    then kernel row, then kernel column.
    """
    arr = np.asarray(weight)
    if arr.ndim != 4:
        raise ShapeError(f"conv weight must be rank 4, got rank {arr.ndim}")
    return FilterMatrix(arr.reshape(arr.shape[0], -1))


def filter_norms(fm: FilterMatrix, norm_kind: NormKind = NormKind.L2) -> np.ndarray:
    """Per-row l1 or l2 norms, always nonnegative."""
    if NormKind(norm_kind) is NormKind.L1:
        return np.abs(fm.data).sum(axis=1)
    return np.linalg.norm(fm.data, axis=1)


def similarity(
    fm: FilterMatrix, similarity_kind: SimilarityKind = SimilarityKind.COSINE
) -> np.ndarray:
    """Pairwise similarity matrix in [-1, 1] with unit diagonal.

    ``cosine`` divides inner products by row norms; ``correlation`` first
    subtracts each row's own mean (cosine of centered rows). Any row whose
    norm falls below ``EPS_ZERO`` after centering gets similarity 0 to every
    other row and 1 to itself. Entries are clamped to [-1, 1] after the
    matrix product so dissimilarity terms can never go negative.
    """
    x = fm.data
    if SimilarityKind(similarity_kind) is SimilarityKind.CORRELATION:
        x = x - x.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(x, axis=1)
    normalized = np.zeros_like(x)
    ok = norms >= EPS_ZERO
    normalized[ok] = x[ok] / norms[ok, None]
    sim = normalized @ normalized.T
    sim = 0.5 * (sim + sim.T)
    np.clip(sim, -1.0, 1.0, out=sim)
    np.fill_diagonal(sim, 1.0)
    return sim


@dataclass(frozen=True)
class ScoreReport:
    """Scores and norms for one layer under one criterion.

    ``scores[i]`` is the importance of filter ``i``; higher means keep.
    """

    layer_name: str
    criterion: CriterionKind
    scores: np.ndarray
    norms: np.ndarray

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64)
        norms = np.asarray(self.norms, dtype=np.float64)
        if scores.ndim != 1 or norms.shape != scores.shape:
            raise ShapeError("scores and norms must be 1-D vectors of equal length")
        if not np.isfinite(scores).all():
            raise ValidationError(f"layer '{self.layer_name}': scores contain non-finite values")
        scores.setflags(write=False)
        norms.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "norms", norms)

    def to_json(self) -> dict:
        return {
            "layer": self.layer_name,
            "criterion": self.criterion.to_json(),
            "scores": [float(v) for v in self.scores],
            "norms": [float(v) for v in self.norms],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ScoreReport":
        return cls(
            layer_name=obj["layer"],
            criterion=CriterionKind.from_json(obj["criterion"]),
            scores=np.asarray(obj["scores"], dtype=np.float64),
            norms=np.asarray(obj["norms"], dtype=np.float64),
        )


def _distance_sums(x: np.ndarray) -> np.ndarray:
    # Row-chunked so large layers never materialize an n*n*cols tensor; the
    # j == i term is identically zero and needs no exclusion.
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        diff = x - x[i]
        out[i] = np.sqrt(np.einsum("ij,ij->i", diff, diff)).sum()
    return out


def score(fm: FilterMatrix, kind: CriterionKind, layer_name: str = "") -> ScoreReport:
    """Score every filter of a layer under ``kind``; higher = more important."""
    norms = filter_norms(fm, kind.norm_kind)
    family = kind.family

    if family is Family.NORM:
        scores = norms.copy()
    elif family is Family.FPGM:
        if fm.rows < 2:
            raise CriterionError("fpgm needs at least 2 filters; a lone distance-sum is 0")
        scores = _distance_sums(fm.data)
    else:
        sim = similarity(fm, kind.similarity_kind)
        if family is Family.COSINE_SUM:
            off_diag = sim.copy()
            np.fill_diagonal(off_diag, 0.0)
            scores = -off_diag.sum(axis=1)
        else:
            dissim = 1.0 - np.abs(sim)  # diagonal is exactly 0
            if family is Family.DM:
                scores = dissim.sum(axis=1)
            elif family is Family.HC:
                scores = norms * dissim.sum(axis=1)
            elif family is Family.WHC:
                scores = norms * (dissim @ norms)
            else:  # pragma: no cover - enum is exhaustive
                raise CriterionError(f"unhandled family {family}")
    return ScoreReport(layer_name=layer_name, criterion=kind, scores=scores, norms=norms)


def importance_order(scores: Sequence[float]) -> np.ndarray:
    """Indices sorted least-important first: ascending score, then index."""
    arr = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(arr.shape[0]), arr))


def _rank_inversions(order_a: np.ndarray, order_b: np.ndarray) -> int:
    # Kendall distance between two permutations of the same index set.
    pos_b = np.empty_like(order_b)
    pos_b[order_b] = np.arange(order_b.shape[0])
    seq = pos_b[order_a]
    count = 0
    for i in range(len(seq)):
        count += int(np.sum(seq[i + 1 :] < seq[i]))
    return count


@dataclass(frozen=True)
class RankStabilityReport:
    """How a criterion's ranking responds to an additive perturbation.

    The perturbation is applied in ``trials`` evenly spaced steps up to the
    full delta; ``step_inversions[k]`` counts pairwise rank inversions
    between the clean ranking and the ranking at step ``k + 1``.
    """

    criterion: CriterionKind
    trials: int
    clean_scores: np.ndarray
    perturbed_scores: np.ndarray
    clean_order: np.ndarray
    perturbed_order: np.ndarray
    step_inversions: tuple[int, ...] = field(repr=False)

    @property
    def inversions(self) -> int:
        return self.step_inversions[-1]


def perturbation_probe(
    fm: FilterMatrix,
    kind: CriterionKind,
    delta: np.ndarray,
    trials: int = 1,
) -> RankStabilityReport:
    """Compare rankings before and after adding ``delta`` to the filters."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != fm.data.shape:
        raise ShapeError(f"delta shape {delta.shape} does not match filters {fm.data.shape}")
    if trials < 1:
        raise ValueError("trials must be >= 1")

    clean = score(fm, kind)
    clean_order = importance_order(clean.scores)
    steps: list[int] = []
    perturbed = clean
    perturbed_order = clean_order
    for k in range(1, trials + 1):
        shifted = FilterMatrix(fm.data + (k / trials) * delta)
        perturbed = score(shifted, kind)
        perturbed_order = importance_order(perturbed.scores)
        steps.append(_rank_inversions(clean_order, perturbed_order))
    return RankStabilityReport(
        criterion=kind,
        trials=trials,
        clean_scores=clean.scores,
        perturbed_scores=perturbed.scores,
        clean_order=clean_order,
        perturbed_order=perturbed_order,
        step_inversions=tuple(steps),
    )
