"""Architecture descriptions, FLOPs accounting, and ResNet presets."""

import json

import numpy as np
import pytest

from prunekit import (
    ArchError,
    ArchSpec,
    ConvLayerSpec,
    RateSchedule,
    flops_drop,
    formula_reduction,
    layer_flops,
    layer_params,
    params_drop,
    preset,
    prune_count,
    rate_sweep,
    recover_rate,
)


def worked_example() -> ArchSpec:
    # Two-layer chain: L1 is 2 -> 8 channels, L2 is 8 -> 4, both 3x3 with
    # 4x4 outputs.
    return ArchSpec(
        layers=(
            ConvLayerSpec("L1", n_in=2, n_out=8, kernel=3, out_h=4, out_w=4),
            ConvLayerSpec("L2", n_in=8, n_out=4, kernel=3, out_h=4, out_w=4),
        ),
        successors={"L1": ("L2",)},
    )


def uniform_chain(depth: int, width: int = 6) -> ArchSpec:
    layers = tuple(
        ConvLayerSpec(f"c{i}", n_in=width, n_out=width, kernel=3, out_h=8, out_w=8)
        for i in range(depth)
    )
    return ArchSpec(layers=layers, successors={f"c{i}": (f"c{i+1}",) for i in range(depth - 1)})


class TestLayerCosts:
    def test_unit_layer(self):
        spec = ConvLayerSpec("u", 1, 1, 1, 1, 1)
        assert layer_flops(spec, factor=1) == 1

    def test_worked_layer(self):
        spec = ConvLayerSpec("l", n_in=2, n_out=8, kernel=3, out_h=4, out_w=4)
        assert layer_flops(spec, factor=1) == 2304

    def test_factor_two_doubles(self):
        spec = ConvLayerSpec("l", n_in=2, n_out=8, kernel=3, out_h=4, out_w=4)
        assert layer_flops(spec, factor=2) == 2 * layer_flops(spec, factor=1)

    def test_params(self):
        assert layer_params(ConvLayerSpec("l", 2, 8, 3, 4, 4)) == 144

    def test_bad_dims(self):
        with pytest.raises(ArchError):
            ConvLayerSpec("l", 0, 8, 3, 4, 4)


class TestArchSpecInvariants:
    def test_duplicate_name(self):
        layer = ConvLayerSpec("l", 1, 1, 1, 1, 1)
        with pytest.raises(ArchError):
            ArchSpec(layers=(layer, layer))

    def test_unknown_successor(self):
        layer = ConvLayerSpec("l", 1, 1, 1, 1, 1)
        with pytest.raises(ArchError):
            ArchSpec(layers=(layer,), successors={"l": ("ghost",)})

    def test_edge_width_mismatch(self):
        a = ConvLayerSpec("a", 1, 4, 1, 1, 1)
        b = ConvLayerSpec("b", 5, 2, 1, 1, 1)
        with pytest.raises(ArchError):
            ArchSpec(layers=(a, b), successors={"a": ("b",)})

    def test_cycle(self):
        a = ConvLayerSpec("a", 4, 4, 1, 1, 1)
        b = ConvLayerSpec("b", 4, 4, 1, 1, 1)
        with pytest.raises(ArchError):
            ArchSpec(layers=(a, b), successors={"a": ("b",), "b": ("a",)})

    def test_json_round_trip(self):
        arch = worked_example()
        back = ArchSpec.from_json(arch.to_json())
        assert back.names() == arch.names()
        assert back.successors == arch.successors
        assert back.layer("L1") == arch.layer("L1")

    def test_from_json_defaults(self):
        obj = {
            "layers": [
                {"name": "a", "n_in": 1, "n_out": 2, "k": 3, "out_h": 4, "out_w": 4}
            ]
        }
        arch = ArchSpec.from_json(obj)
        assert arch.layer("a").compaction_safe and arch.layer("a").prunable

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "arch.json"
        path.write_text(json.dumps(worked_example().to_json()))
        assert ArchSpec.load(path).names() == ["L1", "L2"]


class TestFlopsDrop:
    def test_worked_example_reduces_1728(self):
        arch = worked_example()
        schedule = RateSchedule(0.0, overrides={"L1": 0.25})
        report = flops_drop(arch, schedule, mode="analytic", factor=1)
        assert report.total_base == 6912
        assert report.total_base - report.total_pruned == 1728
        assert report.per_layer["L1"] == (2304, 576)
        assert report.per_layer["L2"] == (4608, 1152)

    def test_formula_matches_worked_example(self):
        assert formula_reduction(worked_example(), "L1", 0.25, factor=1) == 1728

    def test_zero_rates(self):
        report = flops_drop(worked_example(), RateSchedule(0.0))
        assert report.drop_fraction == 0.0
        assert report.total_base == report.total_pruned

    def test_interior_layers_drop_two_r_minus_r_squared(self):
        arch = uniform_chain(6)
        r = 0.3
        report = flops_drop(arch, RateSchedule(r), mode="analytic", factor=1)
        for name, (base, reduced) in report.per_layer.items():
            expected = r if name == "c0" else 2 * r - r * r
            assert reduced / base == pytest.approx(expected, rel=1e-12)

    def test_formula_cross_check_single_layer_integer(self):
        rng = np.random.default_rng(50)
        for _ in range(20):
            depth = int(rng.integers(2, 6))
            widths = [int(rng.integers(2, 12)) for _ in range(depth + 1)]
            layers = tuple(
                ConvLayerSpec(
                    f"c{i}", n_in=widths[i], n_out=widths[i + 1],
                    kernel=int(rng.integers(1, 4)),
                    out_h=int(rng.integers(1, 9)), out_w=int(rng.integers(1, 9)),
                )
                for i in range(depth)
            )
            arch = ArchSpec(
                layers=layers,
                successors={f"c{i}": (f"c{i+1}",) for i in range(depth - 1)},
            )
            target = f"c{int(rng.integers(0, depth))}"
            n_out = arch.layer(target).n_out
            rate = int(rng.integers(0, n_out + 1)) / n_out
            report = flops_drop(
                arch, RateSchedule(0.0, overrides={target: rate}), mode="integer", factor=1
            )
            formula = formula_reduction(arch, target, rate, mode="integer", factor=1)
            assert report.total_base - report.total_pruned == formula

    def test_unknown_layer_in_schedule(self):
        with pytest.raises(ArchError):
            flops_drop(worked_example(), RateSchedule(0.0, overrides={"ghost": 0.5}))

    def test_drop_bounds_and_total_one(self):
        arch = uniform_chain(4)
        assert flops_drop(arch, RateSchedule(1.0)).drop_fraction == 1.0
        for r in (0.0, 0.3, 0.9):
            frac = flops_drop(arch, RateSchedule(r)).drop_fraction
            assert 0.0 <= frac <= 1.0

    def test_factor_does_not_change_fraction(self):
        arch = preset("resnet32")
        sched = RateSchedule(0.37)
        assert (
            flops_drop(arch, sched, factor=1).drop_fraction
            == flops_drop(arch, sched, factor=2).drop_fraction
        )

    def test_monotone_in_each_coordinate(self):
        rng = np.random.default_rng(51)
        arch = preset("resnet20")
        base_rates = {l.name: float(rng.uniform(0, 0.5)) for l in arch.layers if l.prunable}
        base = flops_drop(arch, RateSchedule(0.0, overrides=base_rates)).drop_fraction
        for name in list(base_rates)[:: 4]:
            bumped = dict(base_rates)
            bumped[name] = min(1.0, bumped[name] + 0.3)
            frac = flops_drop(arch, RateSchedule(0.0, overrides=bumped)).drop_fraction
            assert frac >= base

    def test_per_layer_reductions_sum_to_total(self):
        arch = preset("resnet56")
        report = flops_drop(arch, RateSchedule(0.4))
        total_reduced = sum(red for _, red in report.per_layer.values())
        assert total_reduced == pytest.approx(
            report.total_base - report.total_pruned, rel=1e-12
        )

    def test_structural_only_is_weaker(self):
        arch = preset("resnet56")
        sched = RateSchedule(0.4)
        loose = flops_drop(arch, sched).drop_fraction
        strict = flops_drop(arch, sched, structural_only=True).drop_fraction
        assert strict < loose
        report = flops_drop(arch, sched, structural_only=True)
        # The stem feeds the residual stream: structurally nothing shrinks.
        assert report.per_layer["conv1.weight"][1] == 0

    def test_include_fixed_lowers_fraction(self):
        arch = preset("resnet18")
        sched = RateSchedule(0.4)
        with_fc = flops_drop(arch, sched, include_fixed=True)
        without = flops_drop(arch, sched)
        assert with_fc.total_base == without.total_base + 2 * arch.fixed_macs
        assert with_fc.drop_fraction < without.drop_fraction

    def test_params_drop_ignores_spatial(self):
        arch = worked_example()
        report = params_drop(arch, RateSchedule(0.0, overrides={"L1": 0.25}))
        # Own loss: 2 filters * 9 * 2 inputs; successor loss: 4 * 9 * 2.
        assert report.total_base == 144 + 288
        assert report.total_base - report.total_pruned == 36 + 72


class TestPresets:
    MACS = {
        "resnet20": 40_812_544,
        "resnet32": 69_124_096,
        "resnet56": 125_747_200,
        "resnet110": 253_149_184,
        "resnet18": 1_813_561_344,
        "resnet34": 3_663_249_408,
        "resnet50": 4_087_136_256,
    }
    LAYERS = {
        "resnet20": (21, 19),
        "resnet32": (33, 31),
        "resnet56": (57, 55),
        "resnet110": (111, 109),
        "resnet18": (20, 17),
        "resnet34": (36, 33),
        "resnet50": (53, 49),
    }
    # Widely published multiply-accumulate figures for the conv stacks.
    PUBLISHED = {"resnet56": 125.0e6, "resnet20": 40.8e6, "resnet50": 4.09e9}

    @pytest.mark.parametrize("name", sorted(MACS))
    def test_geometry(self, name):
        arch = preset(name)
        total, prunable = self.LAYERS[name]
        assert len(arch.layers) == total
        assert sum(1 for l in arch.layers if l.prunable) == prunable
        base = flops_drop(arch, RateSchedule(0.0), factor=1).total_base
        assert base == self.MACS[name]
        if name in self.PUBLISHED:
            assert abs(base - self.PUBLISHED[name]) / self.PUBLISHED[name] < 0.03

    def test_resnet56_counts_55_convs_plus_2_projections(self):
        arch = preset("resnet56")
        projections = [l for l in arch.layers if "downsample" in l.name]
        assert len(projections) == 2
        assert len(arch.layers) - len(projections) == 55
        widths = sorted({l.n_out for l in arch.layers if "downsample" not in l.name})
        assert widths == [16, 32, 64]

    def test_resnet50_bottleneck_widths(self):
        arch = preset("resnet50")
        for stage, width in enumerate((64, 128, 256, 512), start=1):
            assert arch.layer(f"layer{stage}.0.conv1.weight").n_out == width
            assert arch.layer(f"layer{stage}.0.conv3.weight").n_out == width * 4

    def test_flags_toggle_prunability(self):
        arch = preset("resnet56", prune_first_conv=False, prune_projections=True)
        assert not arch.layer("conv1.weight").prunable
        assert arch.layer("layer2.0.downsample.0.weight").prunable

    def test_residual_joins_are_mask_only(self):
        arch = preset("resnet56")
        assert not arch.layer("conv1.weight").compaction_safe
        assert not arch.layer("layer1.3.conv2.weight").compaction_safe
        assert arch.layer("layer1.3.conv1.weight").compaction_safe
        assert not arch.layer("layer3.0.downsample.0.weight").compaction_safe

    def test_unknown_preset(self):
        with pytest.raises(ArchError):
            preset("vgg16")


class TestSweep:
    def test_zero_rate_sweep(self):
        assert rate_sweep(worked_example(), [0.0]) == {0.0: 0.0}

    def test_strictly_increasing_on_resnet56(self):
        arch = preset("resnet56")
        rates = [round(0.1 * i, 1) for i in range(1, 10)]
        drops = rate_sweep(arch, rates)
        values = [drops[r] for r in rates]
        assert all(a < b for a, b in zip(values, values[1:]))

    def test_recover_rate_hits_target(self):
        arch = preset("resnet56")
        rate, drop = recover_rate(arch, 0.526)
        assert 0.05 <= rate <= 0.75
        assert drop == pytest.approx(0.526, abs=1e-6)

    def test_recover_rate_clamps(self):
        arch = preset("resnet56")
        rate, _ = recover_rate(arch, 0.0001)
        assert rate == 0.05
        rate, _ = recover_rate(arch, 0.9999)
        assert rate == 0.75
