# -*- coding: utf-8 -*-

import logging

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vtcal import numeric as num
from vtcal.common import ConfigError, PersistenceError
from vtcal.config import CalibConfig
from vtcal.crc import (
    CrcHook,
    ProbeCache,
    calibrate_state,
    crc_hooks,
    make_masked_negatives,
    make_negatives,
    probe_directions,
    probe_state,
)
from vtcal.htables import Provenance
from vtcal.linear_model import build_linear_diagnostic

# pylint: disable=no-self-use
# pylint-comment: In tests, classes are just a grouping semantic

VECTORS = arrays(
    np.float64, 4, elements=st.floats(min_value=-10, max_value=10, allow_nan=False)
)


@pytest.fixture
def linear(decoder_config):
    return build_linear_diagnostic(decoder_config, seed=2)


@pytest.fixture
def negatives(vision):
    return make_negatives(vision, 3, 5, num.make_rng(0))


class TestCalibrateState(object):
    @given(VECTORS, VECTORS, st.floats(min_value=0.01, max_value=2.0))
    def test_keeps_norm(self, hidden, direction, strength):
        assume(num.l2_norm(hidden) > 1e-3 and num.l2_norm(direction) > 1e-3)
        unit = hidden / num.l2_norm(hidden)
        moved = unit + strength * direction / num.l2_norm(direction)
        assume(num.l2_norm(moved) > 1e-3)
        result = calibrate_state(hidden, direction, strength)
        assert abs(num.l2_norm(result) / num.l2_norm(hidden) - 1.0) <= 1e-9

    def test_keeps_norm_over_many_draws(self):
        rng = num.make_rng(13)
        hidden = rng.standard_normal((10000, 64)) * rng.uniform(0.1, 10.0, (10000, 1))
        direction = rng.standard_normal((10000, 64))
        strength = rng.uniform(0.0, 0.5, 10000)
        ratios = np.array(
            [
                num.l2_norm(calibrate_state(row, steer, value)) / num.l2_norm(row)
                for row, steer, value in zip(hidden, direction, strength)
            ]
        )
        assert np.max(np.abs(ratios - 1.0)) <= 1e-9

    @given(
        VECTORS,
        VECTORS,
        st.floats(min_value=0.01, max_value=0.5),
        st.floats(min_value=1e-3, max_value=1e3),
    )
    def test_direction_scale_is_irrelevant(self, hidden, direction, strength, alpha):
        assume(num.l2_norm(hidden) > 1e-3 and num.l2_norm(direction) > 1e-3)
        np.testing.assert_allclose(
            calibrate_state(hidden, alpha * direction, strength),
            calibrate_state(hidden, direction, strength),
            rtol=1e-9,
            atol=1e-9,
        )

    def test_zero_strength(self):
        hidden = np.array([3.0, 4.0])
        np.testing.assert_array_equal(calibrate_state(hidden, [1.0, 0.0], 0.0), hidden)

    def test_zero_direction(self):
        hidden = np.array([3.0, 4.0])
        np.testing.assert_array_equal(calibrate_state(hidden, [0.0, 0.0], 0.5), hidden)

    def test_moves_towards_direction(self):
        result = calibrate_state([1.0, 0.0], [0.0, 1.0], 1.0)
        np.testing.assert_allclose(result, [2 ** -0.5, 2 ** -0.5])

    def test_negative_sign(self):
        result = calibrate_state([1.0, 0.0], [0.0, 1.0], 1.0, sign=-1)
        np.testing.assert_allclose(result, [2 ** -0.5, -(2 ** -0.5)])

    def test_cancellation(self, caplog):
        hidden = np.array([1.0, 0.0])
        with caplog.at_level(logging.WARNING):
            result = calibrate_state(hidden, [-1.0, 0.0], 1.0)
        np.testing.assert_array_equal(result, hidden)
        assert "cancelled" in caplog.text


class TestNegatives(object):
    def test_pruned(self, vision, negatives):
        assert len(negatives) == 3
        assert all(len(negative) == 5 for negative in negatives)
        assert all(n.provenance is Provenance.PRUNED for n in negatives)

    def test_deterministic(self, vision, negatives):
        assert make_negatives(vision, 3, 5, num.make_rng(0)) == negatives

    def test_samples_differ(self, negatives):
        assert negatives[0].rows != negatives[1].rows

    @pytest.mark.parametrize("count, kept", [(0, 5), (3, 0), (3, 36)])
    def test_bad_counts(self, vision, count, kept):
        with pytest.raises(ValueError):
            make_negatives(vision, count, kept, num.make_rng(0))

    def test_masked(self, scene, encoder):
        masked = make_masked_negatives(scene, encoder, 2, 0.5, num.make_rng(0))
        assert len(masked) == 2
        assert all(len(negative) == 36 for negative in masked)
        assert masked[0].provenance is Provenance.MASKED_IMAGE


class TestDirections(object):
    def test_linear_oracle(self, linear, vision, query, negatives):
        cache = probe_directions(linear, vision, query, negatives, 3)
        for layer in range(1, 4):
            expected = np.mean(
                [
                    linear.visual_effect(layer, vision)
                    - linear.visual_effect(layer, negative)
                    for negative in negatives
                ],
                axis=0,
            )
            np.testing.assert_allclose(cache.direction(layer), expected, atol=1e-9)

    def test_shared_offset_cancels(self, linear, vision, query, negatives):
        shifted = linear.shift_shared(np.full(linear.hidden_dim, 3.0))
        first = probe_directions(linear, vision, query, negatives, 2)
        second = probe_directions(shifted, vision, query, negatives, 2)
        np.testing.assert_allclose(first.vectors, second.vectors, atol=1e-9)

    @pytest.mark.parametrize("seed", range(100))
    def test_linear_oracle_instances(self, decoder_config, vision, query, seed):
        linear = build_linear_diagnostic(decoder_config, seed)
        rng = num.make_rng(seed, 3)
        negatives = make_negatives(vision, 1 + seed % 4, 1 + seed % 30, rng)
        shifted = linear.shift_shared(10.0 * rng.standard_normal(linear.hidden_dim))
        for model in (linear, shifted):
            cache = probe_directions(model, vision, query, negatives, 2)
            for layer in (1, 2):
                expected = linear.visual_effect(layer, vision) - np.mean(
                    [linear.visual_effect(layer, negative) for negative in negatives],
                    axis=0,
                )
                np.testing.assert_allclose(
                    cache.direction(layer), expected, rtol=1e-12, atol=1e-12
                )

    def test_single_negative(self, linear, vision, query, negatives):
        cache = probe_directions(linear, vision, query, negatives[:1], 1)
        expected = linear.visual_effect(1, vision) - linear.visual_effect(
            1, negatives[0]
        )
        np.testing.assert_allclose(cache.direction(1), expected, atol=1e-9)

    def test_mean_of_single_negative_caches(self, model, vision, query, negatives):
        cache = probe_directions(model, vision, query, negatives, 2)
        singles = [
            probe_directions(model, vision, query, [negative], 2).vectors
            for negative in negatives
        ]
        np.testing.assert_allclose(
            cache.vectors, np.mean(singles, axis=0), rtol=1e-12, atol=1e-12
        )

    def test_workers_do_not_change_result(self, model, vision, query, negatives):
        serial = probe_directions(model, vision, query, negatives, 2)
        threaded = probe_directions(model, vision, query, negatives, 2, workers=3)
        np.testing.assert_array_equal(serial.vectors, threaded.vectors)

    def test_query_mean_position(self, linear, vision, query, negatives):
        cache = probe_directions(linear, vision, query, negatives, 1, "query-mean")
        assert cache.position == "query-mean"
        # The shared effect cancels at every query position.
        expected = np.mean(
            [
                linear.visual_effect(1, vision) - linear.visual_effect(1, negative)
                for negative in negatives
            ],
            axis=0,
        )
        np.testing.assert_allclose(cache.direction(1), expected, atol=1e-9)

    def test_identical_negatives_warn(self, linear, vision, query, caplog):
        with caplog.at_level(logging.WARNING):
            cache = probe_directions(linear, vision, query, [vision], 1)
        np.testing.assert_array_equal(cache.direction(1), 0.0)
        assert "zero" in caplog.text

    def test_no_negatives(self, linear, vision, query):
        with pytest.raises(ValueError):
            probe_directions(linear, vision, query, [], 1)

    def test_state_at_position(self):
        states = np.arange(12.0).reshape(4, 3)
        np.testing.assert_array_equal(probe_state(states, 2), [9.0, 10.0, 11.0])
        np.testing.assert_array_equal(
            probe_state(states, 2, "query-mean"), [7.5, 8.5, 9.5]
        )
        with pytest.raises(ConfigError):
            probe_state(states, 2, "first")


class TestDirectionCache(object):
    def test_save_load(self, tmp_path):
        cache = ProbeCache(np.eye(2, 3), 3, 5, fingerprint="abc")
        path = str(tmp_path / "cache.json")
        cache.save(path)
        assert ProbeCache.load(path, fingerprint="abc") == cache

    def test_fingerprint_mismatch(self, tmp_path):
        path = str(tmp_path / "cache.json")
        ProbeCache(np.eye(2, 3), 3, 5, fingerprint="abc").save(path)
        with pytest.raises(PersistenceError):
            ProbeCache.load(path, fingerprint="other")

    def test_created_at_step_zero(self):
        with pytest.raises(ValueError):
            ProbeCache(np.eye(2), 3, 5, created_step=1)

    def test_read_only(self):
        cache = ProbeCache(np.eye(2), 3, 5)
        with pytest.raises(ValueError):
            cache.vectors[0, 0] = 2.0


class TestCrcHook(object):
    @pytest.fixture
    def hook(self):
        cache = ProbeCache(np.tile([0.0, 1.0], (2, 1)), 3, 5)
        return CrcHook(cache, CalibConfig(layer=2, crc_strength=0.5), prompt_len=3)

    def test_prefill_untouched(self, hook):
        hidden = np.tile([1.0, 0.0], (3, 1))
        np.testing.assert_array_equal(hook(1, 0, hidden, {}), hidden)

    def test_incremental_row(self, hook):
        hidden = np.array([[1.0, 0.0]])
        result = hook(1, 1, hidden, {})
        moved = calibrate_state([1.0, 0.0], [0.0, 1.0], 0.5)
        np.testing.assert_allclose(result, [moved])

    def test_recompute_rows(self, hook):
        hidden = np.tile([1.0, 0.0], (5, 1))
        result = hook(1, 2, hidden, {})
        np.testing.assert_array_equal(result[:3], hidden[:3])
        moved = calibrate_state([1.0, 0.0], [0.0, 1.0], 0.5)
        np.testing.assert_allclose(result[3:], [moved, moved])

    def test_first_step_includes_last_prompt_row(self):
        cache = ProbeCache(np.tile([0.0, 1.0], (2, 1)), 3, 5)
        config = CalibConfig(layer=2, crc_strength=0.5, crc_first_step=True)
        hidden = np.tile([1.0, 0.0], (3, 1))
        result = CrcHook(cache, config, prompt_len=3)(1, 0, hidden, {})
        np.testing.assert_array_equal(result[:2], hidden[:2])
        assert result[2, 1] > 0

    def test_hook_set(self):
        cache = ProbeCache(np.ones((3, 2)), 3, 5)
        hooks = crc_hooks(cache, CalibConfig(layer=3), prompt_len=4)
        assert sorted(hooks.hooks) == [1, 2, 3]

    def test_layer_mismatch(self):
        with pytest.raises(ConfigError):
            crc_hooks(ProbeCache(np.ones((2, 2)), 3, 5), CalibConfig(layer=3), 4)
