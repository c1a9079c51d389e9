# -*- coding: utf-8 -*-
"""Constant lookup tables for vtcal modules."""

import math
from collections import namedtuple
from enum import Enum


class Provenance(Enum):
    """Where a set of vision tokens came from."""

    ORIGINAL = "original"
    AUGMENTED = "augmented"
    PRUNED = "pruned"
    MASKED_IMAGE = "masked-image"


class Mode(Enum):
    """Pipeline modes compared by the harness."""

    VANILLA = "vanilla"
    SVC = "svc"
    CRC = "crc"
    UNIFIED = "unified"
    NAIVE_COMBO = "naive-combo"


class Split(Enum):
    """Distractor sampling strategy of a probe question."""

    RANDOM = "random"
    POPULAR = "popular"
    ADVERSARIAL = "adversarial"


class Shape(Enum):
    """Geometric shapes used to draw objects."""

    SQUARE = 0
    DISC = 1
    DIAMOND = 2


OBJECT_STYLE = namedtuple("OBJECT_STYLE", "name, color, shape")

# Orthonormal basis of the RGB plane orthogonal to gray (1, 1, 1).
CHROMA_BASIS = (
    (2.0 / math.sqrt(6.0), -1.0 / math.sqrt(6.0), -1.0 / math.sqrt(6.0)),
    (0.0, 1.0 / math.sqrt(2.0), -1.0 / math.sqrt(2.0)),
)
HUE_STEPS = 16
SATURATION = 0.35


def hue_direction(step, steps=HUE_STEPS):
    """Return the unit chroma direction of hue step out of steps."""
    angle = 2.0 * math.pi * step / steps
    return (math.cos(angle), math.sin(angle))


def hue_color(step, steps=HUE_STEPS, saturation=SATURATION):
    """Return the RGB color of mid-gray pushed along hue step."""
    cos, sin = hue_direction(step, steps)
    return tuple(
        0.5 + saturation * (cos * first + sin * second)
        for first, second in zip(*CHROMA_BASIS)
    )


# Object k owns hue step k, so no color is gray and no two share a hue.
OBJECT_STYLES = (
    OBJECT_STYLE("person", hue_color(0), Shape.SQUARE),
    OBJECT_STYLE("dog", hue_color(1), Shape.DISC),
    OBJECT_STYLE("cat", hue_color(2), Shape.DIAMOND),
    OBJECT_STYLE("car", hue_color(3), Shape.SQUARE),
    OBJECT_STYLE("bus", hue_color(4), Shape.DISC),
    OBJECT_STYLE("camera", hue_color(5), Shape.DIAMOND),
    OBJECT_STYLE("chair", hue_color(6), Shape.SQUARE),
    OBJECT_STYLE("cup", hue_color(7), Shape.DISC),
    OBJECT_STYLE("bottle", hue_color(8), Shape.DIAMOND),
    OBJECT_STYLE("bird", hue_color(9), Shape.SQUARE),
    OBJECT_STYLE("horse", hue_color(10), Shape.DISC),
    OBJECT_STYLE("clock", hue_color(11), Shape.DIAMOND),
    OBJECT_STYLE("laptop", hue_color(12), Shape.SQUARE),
    OBJECT_STYLE("phone", hue_color(13), Shape.DISC),
    OBJECT_STYLE("book", hue_color(14), Shape.DIAMOND),
    OBJECT_STYLE("vase", hue_color(15), Shape.SQUARE),
)

# Token id layout of the toy vocabulary. Ids between the special tokens and
# OBJECT_BASE, and above the object block, are plain filler tokens.
PAD = 0
BOS = 1
EOS = 2
ASK = 3
QMARK = 4
ANSWER = 5
YES = 6
NO = 7
OBJECT_BASE = 16

# Decoder shape.
NUM_LAYERS = 8
HIDDEN_DIM = 64
NUM_HEADS = 4
VOCAB_SIZE = 256
MAX_SEQ = 512
FFN_MULT = 2
LAYER_NORM_EPS = 1e-5

# Scenes: a 24x24 grid cut into 4x4 patches gives 36 vision tokens.
GRID_SIZE = 24
PATCH_SIZE = 4
CHANNELS = 3
OBJECT_SIZE = 6
BACKGROUND_LEVEL = 0.12
BACKGROUND_CONTRAST = 0.05
PLACEMENT_RETRIES = 200

# Calibration defaults. The source model has 32 layers and intervenes at 16,
# this toy has 8 and keeps the midpoint.
CALIBRATION_LAYER = 4
SVC_STRENGTH = 0.06
CRC_STRENGTH = 0.1
NUM_NEGATIVES = 3
NUM_KEPT_TOKENS = 5
SOURCE_VISION_TOKENS = 576
CONTRAST_WEIGHT = 1.0

# Augmentation recipe.
FLIP_PROB = 0.5
BLUR_RADIUS = 5.0
BLUR_TRUNCATE = 3.0
NOISE_INTENSITY = 0.2
SALT_RATIO = 0.5

EPSILON = 1e-12

CRC_STRENGTH_GRID = (0.05, 0.1, 0.2)
BIAS_STRENGTH_GRID = (
    0.0,
    0.125,
    0.25,
    0.375,
    0.5,
    0.625,
    0.75,
    0.875,
    1.0,
    1.125,
    1.25,
    1.5,
    2.0,
    4.0,
)

# Exit codes of the command line interface.
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

REPORT_COLUMNS = ("fingerprint", "seed", "mode", "split", "metric", "value")
METRICS = (
    "accuracy",
    "precision",
    "recall",
    "f1",
    "yes_ratio",
    "hallucination_rate",
)

# Patch encoder output scale relative to a unit-variance Gaussian map.
ENCODER_GAIN = 4.0
OBJECTS_PER_SCENE = 3

# The last hidden coordinates are reserved: two chroma coordinates written by
# the patch encoder and the object embeddings, then the grounding evidence.
# Random decoder blocks never write them.
RESERVED_DIMS = 3
CHROMA_COLUMNS = [-3, -2]
EVIDENCE_COLUMN = -1
RESERVED_COLUMNS = CHROMA_COLUMNS + [EVIDENCE_COLUMN]

# Grounding head: every vision token votes exp(k (cos - 1)) - w for the asked
# hue, with k the sharpness and w the absence weight. Patches with less chroma
# than the floor vote with a shrunken direction.
GROUNDING_SHARPNESS = 16.0
ABSENCE_WEIGHT = 0.0625
CHROMA_FLOOR = 0.02
READOUT_GAIN = 1.0
