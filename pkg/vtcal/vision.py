# -*- coding: utf-8 -*-

"""
Synthetic scenes and their vision tokens.

A scene is a small RGB grid with colored shapes on a textured dark
background; its ground-truth object list is exact. Scenes become vision
tokens through a fixed seeded linear patch encoder. Token-level pruning keeps
a subset of rows untouched, while pixel masking corrupts the image before
encoding.
"""

import json
import logging
import math
import os
from collections import namedtuple

import numpy as np
from PIL import Image
from scipy import ndimage

from vtcal import numeric as num
from vtcal.common import BaseClass, ConfigError, PersistenceError
from vtcal.htables import (
    BACKGROUND_CONTRAST,
    BACKGROUND_LEVEL,
    BLUR_RADIUS,
    BLUR_TRUNCATE,
    CHANNELS,
    CHROMA_BASIS,
    CHROMA_COLUMNS,
    ENCODER_GAIN,
    FLIP_PROB,
    GRID_SIZE,
    HIDDEN_DIM,
    NOISE_INTENSITY,
    OBJECT_SIZE,
    OBJECT_STYLES,
    PATCH_SIZE,
    PLACEMENT_RETRIES,
    RESERVED_COLUMNS,
    RESERVED_DIMS,
    SALT_RATIO,
    Provenance,
    Shape,
)

_LOGGER = logging.getLogger(__name__)

SceneObject = namedtuple("SceneObject", "object_id, row, col, size")


class Scene(BaseClass):
    """Pixel grid (H, W, C) in [0, 1] with its exact object list."""

    def __init__(self, pixels, objects, seed, provenance=Provenance.ORIGINAL):
        """Initialize a scene; the pixel array is copied and frozen."""
        pixels = np.array(pixels, dtype=np.float64)
        if pixels.ndim != 3:
            raise ValueError(
                "scene pixels must be H x W x C, got {}".format(pixels.shape)
            )
        pixels.flags.writeable = False
        self.pixels = pixels
        self.objects = tuple(SceneObject(*obj) for obj in objects)
        self.seed = int(seed)
        self.provenance = Provenance(provenance)

    def __repr__(self):
        """Return a short representation of the scene."""
        return "Scene(shape={}, objects={}, seed={}, provenance={})".format(
            self.pixels.shape, list(self.object_ids), self.seed, self.provenance
        )

    @property
    def object_ids(self):
        """Return the sorted ground-truth object ids."""
        return tuple(sorted(obj.object_id for obj in self.objects))

    @property
    def grid_size(self):
        """Return the side length of the pixel grid."""
        return self.pixels.shape[0]

    def derive(self, pixels, objects=None, provenance=None):
        """Return a scene with new pixels and the same seed."""
        return Scene(
            pixels,
            self.objects if objects is None else objects,
            self.seed,
            self.provenance if provenance is None else provenance,
        )

    def sidecar(self):
        """Return the JSON-ready ground-truth record of the scene."""
        return {
            "grid": list(self.pixels.shape),
            "objects": [obj._asdict() for obj in self.objects],
            "names": [OBJECT_STYLES[obj.object_id].name for obj in self.objects],
            "provenance": self.provenance.value,
            "seed": self.seed,
        }


class VisionTokens(BaseClass):
    """Vision token matrix (N_v, d) tagged with where it came from."""

    def __init__(self, tokens, provenance, rows=None):
        """Initialize from a token matrix and a provenance tag.

        rows records, for pruned tokens, the source row of each kept token.
        """
        tokens = num.as_matrix(tokens, "vision tokens").copy()
        tokens.flags.writeable = False
        self.tokens = tokens
        self.provenance = Provenance(provenance)
        self.rows = None if rows is None else tuple(int(row) for row in rows)

    def __repr__(self):
        """Return a short representation of the tokens."""
        return "VisionTokens(shape={}, provenance={})".format(
            self.tokens.shape, self.provenance
        )

    def __len__(self):
        """Return N_v."""
        return self.tokens.shape[0]

    @property
    def dim(self):
        """Return the token width d."""
        return self.tokens.shape[1]


def num_vision_tokens(grid_size=GRID_SIZE, patch_size=PATCH_SIZE):
    """Return the number of patch tokens of a square grid."""
    return (grid_size // patch_size) ** 2


def background(grid_size=GRID_SIZE, patch_size=PATCH_SIZE):
    """Return the textured background, tiled with the patch period."""
    rows, cols = np.indices((grid_size, grid_size))
    checker = ((rows % patch_size) + (cols % patch_size)) % 2
    level = BACKGROUND_LEVEL + BACKGROUND_CONTRAST * checker
    return np.repeat(level[:, :, None], CHANNELS, axis=2)


def shape_mask(shape, size=OBJECT_SIZE):
    """Return the boolean footprint of a shape in a size x size box."""
    rows, cols = np.indices((size, size))
    center = (size - 1) / 2.0
    if shape is Shape.SQUARE:
        return np.ones((size, size), dtype=bool)
    if shape is Shape.DISC:
        return (rows - center) ** 2 + (cols - center) ** 2 <= (size / 2.0) ** 2
    return np.abs(rows - center) + np.abs(cols - center) <= size / 2.0


def _overlaps(first, second):
    return not (
        first.row + first.size <= second.row
        or second.row + second.size <= first.row
        or first.col + first.size <= second.col
        or second.col + second.size <= first.col
    )


def generate_scene(
    num_objects, seed, vocab_size=len(OBJECT_STYLES), grid_size=GRID_SIZE
):
    """Return a deterministic scene holding num_objects distinct objects."""
    if not 0 <= num_objects <= vocab_size:
        raise ConfigError(
            "cannot place {} objects from a vocabulary of {}".format(
                num_objects, vocab_size
            )
        )
    if vocab_size > len(OBJECT_STYLES):
        raise ConfigError(
            "object vocabulary is limited to {} styles".format(len(OBJECT_STYLES))
        )
    if num_objects * OBJECT_SIZE ** 2 > grid_size ** 2:
        raise ConfigError(
            "a {0}x{0} grid cannot hold {1} objects".format(grid_size, num_objects)
        )
    rng = num.make_rng(seed, 0)
    chosen = rng.choice(vocab_size, size=num_objects, replace=False)
    object_ids = sorted(int(obj) for obj in chosen)
    placed = []
    for object_id in object_ids:
        for _ in range(PLACEMENT_RETRIES):
            row, col = rng.integers(0, grid_size - OBJECT_SIZE + 1, size=2)
            candidate = SceneObject(object_id, int(row), int(col), OBJECT_SIZE)
            if not any(_overlaps(candidate, other) for other in placed):
                placed.append(candidate)
                break
        else:
            raise ConfigError(
                "could not place object {} after {} attempts (seed {})".format(
                    object_id, PLACEMENT_RETRIES, seed
                )
            )
    _LOGGER.debug("Generated scene %d with objects %s", seed, object_ids)
    return render_scene(placed, seed, grid_size)


def render_scene(objects, seed=0, grid_size=GRID_SIZE):
    """Paint SceneObject tuples onto the background, in the given order."""
    pixels = background(grid_size)
    for obj in objects:
        obj = SceneObject(*obj)
        style = OBJECT_STYLES[obj.object_id]
        window = pixels[obj.row : obj.row + obj.size, obj.col : obj.col + obj.size]
        window[shape_mask(style.shape, obj.size)] = style.color
    return Scene(pixels, objects, seed)


def flip_horizontal(scene):
    """Return the scene mirrored left to right."""
    width = scene.pixels.shape[1]
    objects = [
        obj._replace(col=width - obj.col - obj.size) for obj in scene.objects
    ]
    return scene.derive(scene.pixels[:, ::-1, :], objects)


def gaussian_blur(scene, radius=BLUR_RADIUS, truncate=BLUR_TRUNCATE):
    """Blur each channel with a normalized Gaussian; edges are replicated."""
    blurred = ndimage.gaussian_filter(
        scene.pixels, sigma=(radius, radius, 0), truncate=truncate, mode="nearest"
    )
    return scene.derive(np.clip(blurred, 0.0, 1.0))


def salt_and_pepper(scene, rng, intensity=NOISE_INTENSITY, salt_ratio=SALT_RATIO):
    """Set a random intensity share of pixels to white or black."""
    if not 0.0 <= intensity <= 1.0:
        raise ValueError("noise intensity must be in [0, 1], got {}".format(intensity))
    draws = rng.random(scene.pixels.shape[:2])
    pixels = np.array(scene.pixels)
    pixels[draws < intensity] = 0.0
    pixels[draws < intensity * salt_ratio] = 1.0
    return scene.derive(pixels)


# pylint: disable=too-many-arguments
def augment(
    scene,
    rng,
    flip_prob=FLIP_PROB,
    blur_radius=BLUR_RADIUS,
    noise_intensity=NOISE_INTENSITY,
    salt_ratio=SALT_RATIO,
):
    """Return the augmented view: random flip, then blur, then noise."""
    augmented = scene
    if rng.random() < flip_prob:
        augmented = flip_horizontal(augmented)
    augmented = gaussian_blur(augmented, blur_radius)
    augmented = salt_and_pepper(augmented, rng, noise_intensity, salt_ratio)
    return augmented.derive(augmented.pixels, provenance=Provenance.AUGMENTED)


class PatchEncoder(BaseClass):
    """A fixed seeded linear map from flattened patches to tokens.

    Every output column of the map sums to zero over the input, so a flat
    gray patch encodes to the zero token. The reserved chroma columns carry
    the patch-mean color projected on the chroma plane and the evidence
    column stays zero; the other columns are random.
    """

    def __init__(self, seed=0, hidden_dim=HIDDEN_DIM, patch_size=PATCH_SIZE):
        """Initialize the encoder weights from a seed."""
        self.seed = int(seed)
        self.hidden_dim = int(hidden_dim)
        self.patch_size = int(patch_size)
        if self.hidden_dim <= RESERVED_DIMS:
            raise ConfigError(
                "hidden_dim must be > {}, got {}".format(RESERVED_DIMS, hidden_dim)
            )
        pixels = self.patch_size ** 2
        weights = num.scaled_gaussian(
            num.make_rng(self.seed, 2),
            (pixels * CHANNELS, self.hidden_dim),
            ENCODER_GAIN / math.sqrt(pixels * CHANNELS),
        )
        weights -= weights.mean(axis=0, keepdims=True)
        weights[:, RESERVED_COLUMNS] = 0.0
        weights[:, CHROMA_COLUMNS] = np.tile(np.transpose(CHROMA_BASIS), (pixels, 1))
        weights[:, CHROMA_COLUMNS] /= pixels
        weights.flags.writeable = False
        self.weights = weights

    def __repr__(self):
        """Return a representation of PatchEncoder for programmatic use."""
        return "PatchEncoder(seed={}, hidden_dim={}, patch_size={})".format(
            self.seed, self.hidden_dim, self.patch_size
        )

    def patches(self, pixels):
        """Return the flattened patches of a pixel grid in row-major order."""
        height, width, channels = pixels.shape
        size = self.patch_size
        if height % size or width % size:
            raise ValueError(
                "grid {}x{} is not divisible by patch size {}".format(
                    height, width, size
                )
            )
        if channels * size * size != self.weights.shape[0]:
            raise ValueError(
                "patches of {} values do not fit encoder input {}".format(
                    channels * size * size, self.weights.shape[0]
                )
            )
        blocks = pixels.reshape(height // size, size, width // size, size, channels)
        return blocks.transpose(0, 2, 1, 3, 4).reshape(-1, size * size * channels)

    def encode(self, scene):
        """Return the vision tokens of a scene."""
        tokens = num.matmul(self.patches(scene.pixels), self.weights)
        return VisionTokens(tokens, scene.provenance)


def encode_patches(scene, encoder_seed=0, hidden_dim=HIDDEN_DIM):
    """Return the vision tokens of a scene under a seeded encoder."""
    return PatchEncoder(encoder_seed, hidden_dim).encode(scene)


def prune_tokens(vision, n_keep, rng):
    """Keep n_keep rows drawn uniformly without replacement, in source order."""
    total = len(vision)
    if not 1 <= n_keep <= total:
        raise ValueError("n_keep must be in 1..{}, got {}".format(total, n_keep))
    rows = np.sort(rng.choice(total, size=n_keep, replace=False))
    return VisionTokens(vision.tokens[rows], Provenance.PRUNED, rows)


def mask_image(scene, fraction, rng, patch_size=PATCH_SIZE):
    """Replace about fraction of the patch blocks with uniform noise."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("mask fraction must be in (0, 1], got {}".format(fraction))
    blocks_per_side = scene.grid_size // patch_size
    total = blocks_per_side ** 2
    count = max(1, int(math.ceil(fraction * total - 1e-9)))
    chosen = np.sort(rng.choice(total, size=count, replace=False))
    pixels = np.array(scene.pixels)
    channels = pixels.shape[2]
    for block in chosen:
        row = (block // blocks_per_side) * patch_size
        col = (block % blocks_per_side) * patch_size
        pixels[row : row + patch_size, col : col + patch_size] = rng.random(
            (patch_size, patch_size, channels)
        )
    _LOGGER.debug("Masked %d of %d blocks of scene %d", count, total, scene.seed)
    return scene.derive(pixels, provenance=Provenance.MASKED_IMAGE)


def _sidecar_path(path):
    return os.path.splitext(str(path))[0] + ".json"


def save_scene(scene, path):
    """Write a scene as an 8-bit PNG plus a JSON ground-truth sidecar."""
    image = Image.fromarray(np.round(scene.pixels * 255.0).astype(np.uint8), "RGB")
    try:
        image.save(str(path), format="PNG")
        with open(_sidecar_path(path), "w") as handle:
            json.dump(scene.sidecar(), handle, indent=2, sort_keys=True)
    except OSError as err:
        raise PersistenceError("cannot write scene to {}: {}".format(path, err))
    return _sidecar_path(path)


def load_scene(path):
    """Read a scene written by save_scene; pixels are 8-bit quantized."""
    try:
        with Image.open(str(path)) as image:
            pixels = np.asarray(image.convert("RGB"), dtype=np.float64) / 255.0
        with open(_sidecar_path(path)) as handle:
            sidecar = json.load(handle)
    except (OSError, ValueError) as err:
        raise PersistenceError("cannot read scene from {}: {}".format(path, err))
    if list(pixels.shape) != sidecar["grid"]:
        raise PersistenceError(
            "image shape {} does not match sidecar grid {}".format(
                pixels.shape, sidecar["grid"]
            )
        )
    objects = [
        SceneObject(**{key: obj[key] for key in SceneObject._fields})
        for obj in sidecar["objects"]
    ]
    return Scene(pixels, objects, sidecar["seed"], sidecar["provenance"])
