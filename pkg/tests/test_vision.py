# -*- coding: utf-8 -*-

import numpy as np
import pytest

from vtcal import numeric as num
from vtcal.common import ConfigError, PersistenceError
from vtcal.htables import (
    GRID_SIZE,
    OBJECT_STYLES,
    SATURATION,
    Provenance,
    hue_color,
    hue_direction,
)
from vtcal.vision import (
    PatchEncoder,
    Scene,
    augment,
    encode_patches,
    flip_horizontal,
    gaussian_blur,
    generate_scene,
    load_scene,
    mask_image,
    num_vision_tokens,
    prune_tokens,
    render_scene,
    salt_and_pepper,
    save_scene,
)

# pylint: disable=no-self-use
# pylint-comment: In tests, classes are just a grouping semantic


def flat_scene(level):
    return Scene(np.full((GRID_SIZE, GRID_SIZE, 3), level), [], seed=0)


def flat_color(color):
    pixels = np.tile(np.asarray(color), (GRID_SIZE, GRID_SIZE, 1))
    return Scene(pixels, [], seed=0)


class TestScene(object):
    def test_deterministic(self):
        assert generate_scene(3, 5) == generate_scene(3, 5)

    def test_objects(self, scene):
        assert len(scene.object_ids) == 3
        assert len(set(scene.object_ids)) == 3
        assert scene.provenance is Provenance.ORIGINAL

    def test_pixels_in_range(self, scene):
        assert scene.pixels.min() >= 0.0
        assert scene.pixels.max() <= 1.0

    def test_objects_do_not_overlap(self, scene):
        covered = np.zeros((GRID_SIZE, GRID_SIZE), dtype=int)
        for obj in scene.objects:
            covered[obj.row : obj.row + obj.size, obj.col : obj.col + obj.size] += 1
        assert covered.max() == 1

    @pytest.mark.parametrize("count, vocab", [(5, 4), (30, 16), (2, 20)])
    def test_impossible_scene(self, count, vocab):
        with pytest.raises(ConfigError):
            generate_scene(count, 0, vocab)

    def test_render_matches_generate(self, scene):
        assert render_scene(scene.objects, scene.seed) == scene

    def test_hues_are_distinct(self):
        colors = np.array([style.color for style in OBJECT_STYLES])
        assert len({tuple(color) for color in colors.round(6)}) == len(colors)
        np.testing.assert_allclose(colors.mean(axis=1), 0.5)

    def test_save_load(self, scene, tmp_path):
        path = tmp_path / "scene.png"
        save_scene(scene, path)
        loaded = load_scene(path)
        assert loaded.objects == scene.objects
        assert loaded.seed == scene.seed
        np.testing.assert_allclose(loaded.pixels, scene.pixels, atol=0.5 / 255 + 1e-9)

    def test_load_missing(self, tmp_path):
        with pytest.raises(PersistenceError):
            load_scene(tmp_path / "missing.png")


class TestTransforms(object):
    def test_flip_twice(self, scene):
        assert flip_horizontal(flip_horizontal(scene)) == scene

    def test_flip_moves_objects(self, scene):
        flipped = flip_horizontal(scene)
        for before, after in zip(scene.objects, flipped.objects):
            assert after.col == GRID_SIZE - before.col - before.size

    def test_blur_keeps_constant_image(self):
        blurred = gaussian_blur(flat_scene(0.3), radius=5.0)
        np.testing.assert_allclose(blurred.pixels, 0.3)

    def test_blur_zero_radius(self, scene):
        np.testing.assert_allclose(gaussian_blur(scene, 0.0).pixels, scene.pixels)

    def test_no_noise(self, scene):
        noisy = salt_and_pepper(scene, num.make_rng(0), intensity=0.0)
        np.testing.assert_array_equal(noisy.pixels, scene.pixels)

    def test_full_salt(self, scene):
        noisy = salt_and_pepper(scene, num.make_rng(0), intensity=1.0, salt_ratio=1.0)
        np.testing.assert_array_equal(noisy.pixels, 1.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_noise_fraction(self, seed):
        pixels = np.full((100, 100, 3), 0.5)
        noisy = salt_and_pepper(Scene(pixels, [], 0), num.make_rng(seed), 0.2)
        extreme = np.all(noisy.pixels == 0.0, axis=2) | np.all(
            noisy.pixels == 1.0, axis=2
        )
        assert extreme.size == 10000
        assert abs(extreme.mean() - 0.2) <= 0.02

    def test_bad_intensity(self, scene):
        with pytest.raises(ValueError):
            salt_and_pepper(scene, num.make_rng(0), intensity=1.5)

    def test_augment(self, scene):
        view = augment(scene, num.make_rng(0))
        assert view.provenance is Provenance.AUGMENTED
        assert view.pixels.shape == scene.pixels.shape
        assert view.object_ids == scene.object_ids

    def test_augment_deterministic(self, scene):
        assert augment(scene, num.make_rng(1)) == augment(scene, num.make_rng(1))


class TestEncoder(object):
    def test_token_count(self, vision):
        assert len(vision) == num_vision_tokens() == 36
        assert vision.dim == 16

    def test_gray_encodes_to_zero(self, encoder):
        tokens = encoder.encode(flat_scene(0.5)).tokens
        np.testing.assert_allclose(tokens, 0.0, atol=1e-12)

    @pytest.mark.parametrize("step", [0, 5, 11])
    def test_chroma_columns(self, encoder, step):
        tokens = encoder.encode(flat_color(hue_color(step))).tokens
        expected = SATURATION * np.array(hue_direction(step))
        np.testing.assert_allclose(
            tokens[:, -3:-1], np.tile(expected, (36, 1)), atol=1e-12
        )
        np.testing.assert_array_equal(tokens[:, -1], 0.0)

    def test_too_narrow(self):
        with pytest.raises(ConfigError):
            PatchEncoder(0, 3)

    def test_deterministic(self, scene):
        assert PatchEncoder(3, 16).encode(scene) == PatchEncoder(3, 16).encode(scene)

    def test_encode_patches(self, scene, vision):
        assert encode_patches(scene, 0, 16) == vision
        assert encode_patches(scene, 1, 16) != vision

    def test_patch_order(self, encoder):
        pixels = np.zeros((GRID_SIZE, GRID_SIZE, 3))
        pixels[:4, 4:8] = 1.0
        patches = encoder.patches(pixels)
        assert patches[1].min() == 1.0
        assert patches[0].max() == 0.0

    def test_bad_grid(self, encoder):
        with pytest.raises(ValueError):
            encoder.patches(np.zeros((10, 10, 3)))

    def test_provenance_follows_scene(self, scene, encoder):
        view = augment(scene, num.make_rng(0))
        assert encoder.encode(view).provenance is Provenance.AUGMENTED


class TestPruning(object):
    def test_prune(self, vision):
        pruned = prune_tokens(vision, 5, num.make_rng(0))
        assert len(pruned) == 5
        assert pruned.provenance is Provenance.PRUNED
        assert list(pruned.rows) == sorted(set(pruned.rows))
        np.testing.assert_array_equal(pruned.tokens, vision.tokens[list(pruned.rows)])

    def test_keep_all(self, vision):
        pruned = prune_tokens(vision, len(vision), num.make_rng(0))
        np.testing.assert_array_equal(pruned.tokens, vision.tokens)

    def test_uniform(self, vision):
        rng = num.make_rng(0)
        counts = np.zeros(len(vision))
        for _ in range(2000):
            counts[list(prune_tokens(vision, 5, rng).rows)] += 1
        expected = 2000 * 5 / float(len(vision))
        assert np.all(np.abs(counts - expected) < 80)

    @pytest.mark.parametrize("n_keep", [0, 37])
    def test_bad_count(self, vision, n_keep):
        with pytest.raises(ValueError):
            prune_tokens(vision, n_keep, num.make_rng(0))


class TestMasking(object):
    def test_masked_blocks(self, scene, encoder):
        masked = mask_image(scene, 0.5, num.make_rng(0))
        changed = np.any(
            encoder.patches(masked.pixels) != encoder.patches(scene.pixels), axis=1
        )
        assert changed.sum() == 18
        assert masked.provenance is Provenance.MASKED_IMAGE

    def test_at_least_one_block(self, scene, encoder):
        masked = mask_image(scene, 1e-9, num.make_rng(0))
        changed = np.any(
            encoder.patches(masked.pixels) != encoder.patches(scene.pixels), axis=1
        )
        assert changed.sum() == 1

    @pytest.mark.parametrize("fraction", [0.0, 1.5])
    def test_bad_fraction(self, scene, fraction):
        with pytest.raises(ValueError):
            mask_image(scene, fraction, num.make_rng(0))
