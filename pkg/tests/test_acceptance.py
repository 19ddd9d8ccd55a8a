"""Acceptance suite: every exit criterion at its stated tolerance.

Each test prints one PASS line when its criterion holds (run with -s or
-rA to see them); a failing assertion is the FAIL signal. Tolerances are
pinned here, not configurable.
"""

import time

import numpy as np

from prunekit import (
    ArchSpec,
    ConvLayerSpec,
    CriterionKind,
    Family,
    FilterMatrix,
    LayerSelector,
    NormKind,
    RateSchedule,
    ScoreReport,
    SimilarityKind,
    TensorStore,
    apply_hard,
    apply_soft,
    build_plan,
    filter_norms,
    flops_drop,
    importance_order,
    preset,
    rate_sweep,
    score,
    similarity,
)
from oracles import forward_chain, naive_scores, random_chain

WHC = CriterionKind(Family.WHC)
HC = CriterionKind(Family.HC)
DM = CriterionKind(Family.DM)
COS_SUM = CriterionKind(Family.COSINE_SUM)

ALL_CRITERIA = [
    CriterionKind(Family.NORM, NormKind.L1),
    CriterionKind(Family.NORM, NormKind.L2),
    COS_SUM,
    CriterionKind(Family.FPGM),
    DM,
    HC,
    WHC,
    CriterionKind(Family.WHC, NormKind.L1),
    CriterionKind(Family.WHC, similarity_kind=SimilarityKind.CORRELATION),
]

N_INSTANCES = 100


def _passed(name: str) -> None:
    print(f"[ACCEPTANCE PASS] {name}")


def _report(name: str, scores) -> ScoreReport:
    scores = np.asarray(scores, dtype=np.float64)
    return ScoreReport(name, WHC, scores, np.abs(scores))


def test_oracle_equivalence_200_matrices():
    """Every criterion matches the naive double-loop reference at 1e-9."""
    rng = np.random.default_rng(20230501)
    start = time.perf_counter()
    for _ in range(200):
        rows = int(rng.integers(2, 17))
        cols = int(rng.integers(1, 33))
        matrix = rng.standard_normal((rows, cols))
        fm = FilterMatrix(matrix)
        for kind in ALL_CRITERIA:
            ours = score(fm, kind).scores
            reference = naive_scores(
                matrix, kind.family.value, kind.norm_kind.value, kind.similarity_kind.value
            )
            assert np.allclose(ours, reference, rtol=1e-9, atol=1e-12), kind.label()
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"oracle sweep took {elapsed:.1f}s"
    _passed(f"oracle equivalence: 200 matrices x {len(ALL_CRITERIA)} criteria "
            f"at 1e-9 in {elapsed:.1f}s")


def test_relationship_criterion_blindspot_scenarios():
    """Weighted scoring breaks the ties that relationship-only scoring leaves."""
    ortho_vs_antiparallel = FilterMatrix(np.array([[0.0, 1.0], [1.0, 0.0], [-1.0, 0.0]]))
    whc_a = score(ortho_vs_antiparallel, WHC).scores
    assert whc_a.tolist() == [2.0, 1.0, 1.0]
    cos_a = score(ortho_vs_antiparallel, COS_SUM).scores
    assert cos_a[1] == cos_a[2]  # the antiparallel pair ties
    assert importance_order(whc_a)[0] in (1, 2)  # an antiparallel filter goes first

    parallel_unequal = FilterMatrix(np.array([[1.0, 0.0], [0.0, 0.5], [0.0, 1.0]]))
    whc_b = score(parallel_unequal, WHC).scores
    assert whc_b.tolist() == [1.5, 0.5, 1.0]
    cos_b = score(parallel_unequal, COS_SUM).scores
    assert cos_b[1] == cos_b[2] == -1.0  # same angles, norms invisible
    assert importance_order(whc_b)[0] == 1  # small-norm parallel filter goes first
    _passed("blindspot scenarios: scores [2,1,1] and [1.5,0.5,1.0], "
            "cosine-sum ties broken by weighting")


def test_property_permutation_equivariance():
    rng = np.random.default_rng(101)
    for _ in range(N_INSTANCES):
        rows = int(rng.integers(2, 10))
        matrix = rng.standard_normal((rows, int(rng.integers(2, 12))))
        perm = rng.permutation(rows)
        kind = ALL_CRITERIA[int(rng.integers(len(ALL_CRITERIA)))]
        plain = score(FilterMatrix(matrix), kind).scores
        shuffled = score(FilterMatrix(matrix[perm]), kind).scores
        assert np.allclose(shuffled, plain[perm], rtol=1e-12, atol=1e-12)
    _passed(f"permutation equivariance over {N_INSTANCES} instances")


def test_property_positive_scaling_argsort_invariance():
    rng = np.random.default_rng(102)
    factors = {
        Family.NORM: lambda c: c,
        Family.HC: lambda c: c,
        Family.WHC: lambda c: c * c,
        Family.FPGM: lambda c: c,
        Family.DM: lambda c: 1.0,
        Family.COSINE_SUM: lambda c: 1.0,
    }
    for _ in range(N_INSTANCES):
        matrix = rng.standard_normal((int(rng.integers(2, 10)), int(rng.integers(2, 12))))
        c = float(rng.uniform(0.1, 10.0))
        family = list(factors)[int(rng.integers(len(factors)))]
        kind = CriterionKind(family)
        base = score(FilterMatrix(matrix), kind).scores
        scaled = score(FilterMatrix(c * matrix), kind).scores
        assert np.allclose(scaled, factors[family](c) * base, rtol=1e-9, atol=1e-12)
        assert np.array_equal(importance_order(scaled), importance_order(base))
    _passed(f"positive-scaling argsort invariance over {N_INSTANCES} instances")


def test_property_rotation_invariance():
    rng = np.random.default_rng(103)
    l2_cosine_kinds = [
        CriterionKind(Family.NORM),
        COS_SUM,
        CriterionKind(Family.FPGM),
        DM,
        HC,
        WHC,
    ]
    for _ in range(N_INSTANCES):
        cols = int(rng.integers(2, 12))
        matrix = rng.standard_normal((int(rng.integers(2, 9)), cols))
        q, _ = np.linalg.qr(rng.standard_normal((cols, cols)))
        kind = l2_cosine_kinds[int(rng.integers(len(l2_cosine_kinds)))]
        base = score(FilterMatrix(matrix), kind).scores
        rotated = score(FilterMatrix(matrix @ q), kind).scores
        assert np.allclose(rotated, base, rtol=1e-6, atol=1e-9)
    _passed(f"rotation invariance (1e-6) over {N_INSTANCES} instances")


def _orders_agree_up_to_ties(a: np.ndarray, b: np.ndarray, rtol: float = 1e-9) -> bool:
    """Every pair separated beyond float noise in both vectors sorts alike."""
    tol_a = rtol * max(1.0, float(np.abs(a).max()))
    tol_b = rtol * max(1.0, float(np.abs(b).max()))
    for i in range(len(a)):
        for j in range(i + 1, len(a)):
            if abs(a[i] - a[j]) > tol_a and abs(b[i] - b[j]) > tol_b:
                if np.sign(a[i] - a[j]) != np.sign(b[i] - b[j]):
                    return False
    return True


def test_property_norm_equality_collapse():
    rng = np.random.default_rng(104)
    for _ in range(N_INSTANCES):
        rows = rng.standard_normal((int(rng.integers(2, 10)), int(rng.integers(2, 12))))
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        n = float(rng.uniform(0.2, 5.0))
        fm = FilterMatrix(n * rows)
        whc = score(fm, WHC).scores
        hc = score(fm, HC).scores
        assert np.allclose(whc, n * hc, rtol=1e-9)
        # Exactly equal norms only exist up to rounding, so rankings must
        # agree wherever the scores are separated beyond float noise.
        assert _orders_agree_up_to_ties(whc, hc)
    _passed(f"norm-equality collapse (whc = n * hc, same ranking) over {N_INSTANCES} instances")


def test_property_antiphase_blindness_of_dm():
    rng = np.random.default_rng(105)
    for _ in range(N_INSTANCES):
        x = rng.standard_normal(int(rng.integers(2, 16)))
        alpha = float(rng.uniform(0.1, 4.0))
        pair = FilterMatrix(np.stack([x, -alpha * x]))
        assert np.abs(score(pair, DM).scores).max() <= 1e-12
    _passed(f"antiphase blindness of the dissimilarity sum over {N_INSTANCES} instances")


def test_property_plan_determinism_and_monotonicity():
    rng = np.random.default_rng(106)
    for _ in range(N_INSTANCES):
        n = int(rng.integers(2, 30))
        reports = [_report("layer", rng.standard_normal(n))]
        r_low = float(rng.uniform(0.0, 0.5))
        r_high = float(rng.uniform(r_low, 1.0))
        low = build_plan(reports, RateSchedule(r_low))
        high = build_plan(reports, RateSchedule(r_high))
        again = build_plan(reports, RateSchedule(r_low))
        assert low.to_json_bytes() == again.to_json_bytes()
        assert set(low.per_layer["layer"].pruned) <= set(high.per_layer["layer"].pruned)
    _passed(f"plan determinism and rate monotonicity over {N_INSTANCES} instances")


def test_flops_worked_example_exact():
    arch = ArchSpec(
        layers=(
            ConvLayerSpec("L1", n_in=2, n_out=8, kernel=3, out_h=4, out_w=4),
            ConvLayerSpec("L2", n_in=8, n_out=4, kernel=3, out_h=4, out_w=4),
        ),
        successors={"L1": ("L2",)},
    )
    report = flops_drop(arch, RateSchedule(0.0, overrides={"L1": 0.25}),
                        mode="analytic", factor=1)
    assert report.total_base - report.total_pruned == 1728
    _passed("two-layer chain reduces exactly 1728 FLOPs (factor 1, analytic)")


def test_soft_hard_forward_equivalence():
    rng = np.random.default_rng(107)
    for _ in range(20):
        depth = int(rng.integers(2, 4))
        layers = random_chain(rng, depth=depth, kernel=int(rng.integers(1, 3)))
        names = [name for name, _ in layers]
        store = TensorStore(dict(layers))
        arch = ArchSpec(
            layers=tuple(
                ConvLayerSpec(name, n_in=w.shape[1], n_out=w.shape[0],
                              kernel=w.shape[2], out_h=5, out_w=5)
                for name, w in layers
            ),
            successors={a: (b,) for a, b in zip(names, names[1:])},
        )
        reports = [_report(name, rng.standard_normal(w.shape[0])) for name, w in layers]
        plan = build_plan(reports, RateSchedule(float(rng.uniform(0.1, 0.5))))
        soft = apply_soft(store, plan, LayerSelector(tuple(names)))
        hard = apply_hard(store, plan, arch)

        x = rng.standard_normal((layers[0][1].shape[1], 8, 8))
        soft_out = forward_chain([soft[n] for n in names], x)
        hard_out = forward_chain([hard[n] for n in names], x)
        pruned_last = list(plan.per_layer[names[-1]].pruned)
        kept_last = [i for i in range(layers[-1][1].shape[0]) if i not in pruned_last]
        assert np.allclose(hard_out, soft_out[kept_last], atol=1e-5)
        if pruned_last:
            assert np.abs(soft_out[pruned_last]).max() == 0.0
    _passed("soft/hard forward equivalence on random chains at 1e-5")


def test_table_flops_drop_reproduction():
    """A uniform-rate sweep recovers every published drop within 1.5 points."""
    targets = {
        "resnet56": [28.4, 41.1, 52.6, 54.8, 63.2],
        "resnet110": [40.8, 52.3, 65.8],
        "resnet32": [41.5, 53.2],
        "resnet20": [42.2, 54.0],
        "resnet50": [42.2, 53.5, 60.9],
    }
    grid = [round(0.05 + 0.001 * i, 3) for i in range(701)]  # 0.05 .. 0.75
    start = time.perf_counter()
    recovered = []
    for name, percents in targets.items():
        drops = rate_sweep(preset(name), grid, mode="analytic")
        for target in percents:
            rate = min(grid, key=lambda r: abs(drops[r] * 100.0 - target))
            achieved = drops[rate] * 100.0
            assert 0.05 <= rate <= 0.75
            assert abs(achieved - target) <= 1.5, (name, target, rate, achieved)
            recovered.append((name, target, rate, achieved))
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"rate sweeps took {elapsed:.1f}s"
    for name, target, rate, achieved in recovered:
        print(f"  {name}: target {target:.1f}% -> uniform rate {rate:.3f} "
              f"gives {achieved:.2f}%")
    _passed(f"table drop reproduction: {len(recovered)} targets within "
            f"1.5 points in {elapsed:.1f}s")


def test_perturbation_robustness_of_weighted_terms():
    """A tiny nudge flips the raw dissimilarity term but not the weighted one."""
    clean = FilterMatrix(np.array([[100.0, 0.0], [0.0, 0.1]]))
    shifted = FilterMatrix(clean.data + np.array([[0.0, 0.0], [-0.1, -0.1]]))

    dm_before = 1.0 - abs(similarity(clean)[0, 1])
    dm_after = 1.0 - abs(similarity(shifted)[0, 1])
    assert dm_before == 1.0
    assert dm_after == 0.0

    weighted_before = filter_norms(clean)[1] * dm_before
    weighted_after = filter_norms(shifted)[1] * dm_after
    assert weighted_before == 0.1
    assert weighted_after == 0.0
    assert abs(weighted_after - weighted_before) <= 0.1
    _passed("perturbation: raw dissimilarity term 1 -> 0, weighted contribution "
            "moves only 0.1 -> 0")
