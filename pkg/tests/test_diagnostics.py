# -*- coding: utf-8 -*-

import numpy as np
import pytest

from vtcal import numeric as num
from vtcal.common import ConfigError
from vtcal.decoder import build_model
from vtcal.diagnostics import (
    AttentionTrace,
    DistanceReport,
    OverheadReport,
    PruningPoint,
    bootstrap_interval,
    check_kept_grid,
    complementarity_overlap,
    distance_gap,
    distance_report,
    measure_overhead,
    pruning_sweep,
    pruning_trend,
    trace_visual_attention,
)
from vtcal.harness import (
    answer_task,
    build_task,
    calibrate_bias,
    hallucination_rate,
    run_experiment,
)
from vtcal.htables import CRC_STRENGTH_GRID, Mode
from vtcal.pipeline import make_query
from vtcal.vision import PatchEncoder, augment, generate_scene

# pylint: disable=no-self-use
# pylint-comment: In tests, classes are just a grouping semantic


class TestAttentionTrace(object):
    def test_masses(self, model, vision, query):
        trace = trace_visual_attention(model, vision, query, max_new=6, layer=2)
        assert len(trace.masses) == 6
        assert all(0.0 <= mass <= 1.0 for mass in trace.masses)
        assert trace.num_vision == len(vision)

    def test_deterministic(self, model, vision, query):
        first = trace_visual_attention(model, vision, query, max_new=4, layer=2)
        second = trace_visual_attention(model, vision, query, max_new=4, layer=2)
        assert first == second

    @pytest.mark.parametrize(
        "masses, trend",
        [([0.5, 0.5, 0.5], 0.0), ([0.1, 0.2, 0.3], 1.0), ([0.3, 0.2, 0.1], -1.0)],
    )
    def test_trend(self, masses, trend):
        assert AttentionTrace(masses, 1, 10).trend() == pytest.approx(trend)


class TestOverlap(object):
    def test_identical_tokens(self, vision):
        hidden = num.make_rng(0).standard_normal((3, vision.dim))
        assert complementarity_overlap(vision, vision, hidden) == pytest.approx(1.0)

    def test_augmented_view(self, scene, vision, encoder):
        view = encoder.encode(augment(scene, num.make_rng(0)))
        hidden = num.make_rng(0).standard_normal((3, vision.dim))
        assert 0.0 <= complementarity_overlap(vision, view, hidden) <= 1.0


class TestDistances(object):
    def test_entry_count(self, model, scene, vision, query, calib, encoder):
        report = distance_report(
            model, scene, vision, query, calib, encoder, num.make_rng(0)
        )
        assert len(report) == 2 * calib.num_negatives * calib.layer
        assert all(entry.distance >= 0 for entry in report.entries)

    def test_keeping_every_token(self, model, scene, vision, query, calib, encoder):
        report = distance_report(
            model,
            scene,
            vision,
            query,
            calib,
            encoder,
            num.make_rng(0),
            num_kept=len(vision),
        )
        for layer in range(1, calib.layer + 1):
            assert report.distances("pruned", layer) == [0.0] * calib.num_negatives

    def test_gap(self):
        reports = [
            DistanceReport([(1, "pruned", 0, 1.0), (1, "masked", 0, 3.0)]),
            DistanceReport([(1, "pruned", 0, 2.0), (1, "masked", 0, 3.0)]),
        ]
        mean, low, high = distance_gap(reports, 1)
        assert mean == pytest.approx(1.5)
        assert low <= mean <= high


class TestBootstrap(object):
    def test_constant(self):
        assert bootstrap_interval([2.0, 2.0, 2.0]) == (2.0, 2.0)

    def test_contains_mean(self):
        values = num.make_rng(0).standard_normal(50)
        low, high = bootstrap_interval(values, seed=1)
        assert low < np.mean(values) < high

    def test_reproducible(self):
        values = num.make_rng(0).standard_normal(20)
        assert bootstrap_interval(values, seed=1) == bootstrap_interval(values, seed=1)


class TestOverhead(object):
    def test_report_arithmetic(self):
        report = OverheadReport(10, 0.002, 0.003, 0.05)
        assert report.ratio == pytest.approx(1.5)
        assert report.amortized_probe == pytest.approx(0.005)
        assert sorted(report.as_dict()) == [
            "amortized_probe",
            "max_new",
            "pipeline_per_token",
            "probe_seconds",
            "ratio",
            "vanilla_per_token",
        ]

    def test_zero_vanilla_time(self):
        assert OverheadReport(1, 0.0, 1.0, 0.0).ratio == float("inf")

    def test_measure(self, model, scene, vision, query, calib, encoder):
        report = measure_overhead(
            model, scene, vision, query, calib, encoder, 3, Mode.UNIFIED, repeats=1
        )
        assert report.max_new == 3
        assert report.vanilla > 0
        assert report.pipeline > 0
        assert report.probe > 0

    def test_vanilla_mode_is_the_no_op_baseline(
        self, model, scene, vision, query, calib, encoder
    ):
        report = measure_overhead(
            model, scene, vision, query, calib, encoder, 4, Mode.VANILLA, repeats=5
        )
        assert 0.5 <= report.ratio <= 2.0


class TestPruningSweep(object):
    def test_keeping_every_token_matches_vanilla(self, run_config, model):
        task = build_task(run_config.task)
        points = pruning_sweep(run_config, task, [36], model=model)
        outcomes = answer_task(run_config, task, model)
        correct = [
            truth == answer
            for truths, answers in outcomes.values()
            for truth, answer in zip(truths, answers)
        ]
        assert points[0].num_kept == 36
        assert points[0].accuracy == pytest.approx(np.mean(correct))
        assert points[0].low <= points[0].accuracy <= points[0].high

    def test_bad_grid(self, run_config, model):
        with pytest.raises(ValueError):
            pruning_sweep(run_config, build_task(run_config.task), [0], model=model)

    @pytest.mark.parametrize("grid", [[37], [], [36, 9, 40]])
    def test_grid_beyond_the_tokens(self, run_config, model, grid):
        with pytest.raises(ConfigError):
            pruning_sweep(run_config, build_task(run_config.task), grid, model=model)

    def test_check_kept_grid(self):
        check_kept_grid([1, 4], num_vision=4)
        with pytest.raises(ConfigError):
            check_kept_grid([5], num_vision=4)

    def test_trend(self):
        points = [PruningPoint(36, 0.9, 0, 1), PruningPoint(9, 0.7, 0, 1)]
        assert pruning_trend(points) == pytest.approx(1.0)
        assert pruning_trend(points[:1]) == 0.0


def toy_scenes(count, encoder):
    """Yield (scene, vision, query) for seeded three-object scenes."""
    for seed in range(count):
        scene = generate_scene(3, seed)
        yield scene, encoder.encode(scene), make_query(scene.object_ids[0])


def mean_accuracy(result):
    accuracy = [values["accuracy"] for values in result.metrics.values()]
    return sum(accuracy) / len(accuracy)


@pytest.mark.slow
class TestExperimentScale(object):
    @pytest.fixture
    def toy_model(self, toy_config):
        return build_model(toy_config.decoder)

    @pytest.fixture
    def toy_encoder(self, toy_config):
        return PatchEncoder(toy_config.encoder_seed, toy_config.decoder.hidden_dim)

    def test_pruned_states_stay_closer_than_masked(
        self, toy_config, toy_model, toy_encoder
    ):
        calib = toy_config.calib
        reports = [
            distance_report(
                toy_model, scene, vision, query, calib, toy_encoder, num.make_rng(i)
            )
            for i, (scene, vision, query) in enumerate(toy_scenes(50, toy_encoder))
        ]
        mean, low, high = distance_gap(reports, calib.layer)
        assert mean > 0.0
        assert 0.0 < low <= mean <= high

    def test_attention_fades_over_long_decodes(self, toy_model, toy_encoder):
        trends = [
            trace_visual_attention(toy_model, vision, query, 32).trend()
            for _, vision, query in toy_scenes(50, toy_encoder)
        ]
        assert np.mean(np.array(trends) <= 0.0) >= 0.9

    def test_unified_reduces_false_yes_rate(self, toy_config):
        task = build_task(toy_config.task)
        strength, _ = calibrate_bias(toy_config, task, 0.3)
        assert strength is not None
        decoder = toy_config.decoder.__class__(
            **dict(toy_config.decoder.as_dict(), prior_bias_strength=strength)
        )
        biased = toy_config.replace(decoder=decoder)
        model = build_model(decoder)
        vanilla = run_experiment(biased, task, model=model, save=False)
        unified = run_experiment(
            biased.replace(mode=Mode.UNIFIED), task, model=model, save=False
        )
        assert hallucination_rate(vanilla) >= 0.3
        assert hallucination_rate(unified) < hallucination_rate(vanilla)
        calibrated = [
            run_experiment(
                biased.replace(
                    mode=Mode.CRC, calib=biased.calib.replace(crc_strength=value)
                ),
                task,
                model=model,
                save=False,
            )
            for value in CRC_STRENGTH_GRID
        ]
        best = max(mean_accuracy(result) for result in calibrated)
        assert best >= mean_accuracy(vanilla)

    def test_setup_cost_amortizes(self, toy_config, toy_model, toy_encoder):
        scene, vision, query = next(toy_scenes(1, toy_encoder))
        reports = [
            measure_overhead(
                toy_model,
                scene,
                vision,
                query,
                toy_config.calib,
                toy_encoder,
                max_new,
                Mode.UNIFIED,
                repeats=5,
            )
            for max_new in (16, 64, 256)
        ]
        amortized = [report.amortized_probe for report in reports]
        assert amortized[0] > amortized[1] > amortized[2]
        assert reports[-1].ratio <= 1.2

    def test_accuracy_falls_as_tokens_are_pruned(self, toy_config, toy_model):
        task = build_task(toy_config.task)
        points = pruning_sweep(toy_config, task, [36, 18, 9, 3, 1], model=toy_model)
        assert pruning_trend(points) > 0.0
        for wider, narrower in zip(points, points[1:]):
            assert narrower.accuracy <= wider.high
        outcomes = answer_task(toy_config, task, toy_model)
        correct = [
            truth == answer
            for truths, answers in outcomes.values()
            for truth, answer in zip(truths, answers)
        ]
        assert points[0].accuracy == np.mean(correct)
