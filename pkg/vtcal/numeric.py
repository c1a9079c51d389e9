# -*- coding: utf-8 -*-
"""Deterministic dense algebra and random number facilities.

Matrices and vectors are plain float64 numpy arrays; the helpers here check
shapes and finiteness so every other module can rely on them. Random streams
come from the counter-based Philox4x64-10 bit generator, which numpy
documents as bit-exact across platforms for a given seed.
"""

from functools import reduce

import numpy as np

from vtcal.common import DegenerateVectorError, NumericError
from vtcal.htables import EPSILON, LAYER_NORM_EPS


def as_matrix(value, name="matrix"):
    """Return value as a finite 2-D float64 array."""
    matrix = np.asarray(value, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError("{} must be 2-D, got shape {}".format(name, matrix.shape))
    check_finite(matrix, name)
    return matrix


def as_vector(value, name="vector"):
    """Return value as a finite 1-D float64 array."""
    vector = np.asarray(value, dtype=np.float64)
    if vector.ndim != 1:
        raise ValueError("{} must be 1-D, got shape {}".format(name, vector.shape))
    check_finite(vector, name)
    return vector


def check_finite(array, name="array"):
    """Raise NumericError if array holds NaN or Inf."""
    if not np.all(np.isfinite(array)):
        raise NumericError("{} contains non-finite values".format(name))
    return array


def matmul(first, second):
    """Return the matrix product of two 2-D arrays."""
    first = as_matrix(first, "left operand")
    second = as_matrix(second, "right operand")
    if first.shape[1] != second.shape[0]:
        raise ValueError(
            "cannot multiply {} by {}".format(first.shape, second.shape)
        )
    return check_finite(first @ second, "product")


def softmax(scores, axis=-1):
    """Return a max-shifted softmax along axis.

    Entries equal to -inf (masked positions) get zero weight; every slice
    must keep at least one finite entry.
    """
    scores = np.asarray(scores, dtype=np.float64)
    shifted = scores - np.max(scores, axis=axis, keepdims=True)
    weights = np.exp(shifted)
    return weights / np.sum(weights, axis=axis, keepdims=True)


def softmax_rows(matrix):
    """Return the row-wise softmax of a non-empty finite matrix."""
    matrix = as_matrix(matrix)
    if matrix.size == 0:
        raise ValueError("softmax_rows needs a non-empty matrix")
    return softmax(matrix, axis=1)


def l2_norm(vector):
    """Return the Euclidean norm of a vector."""
    return float(np.sqrt(np.dot(vector, vector)))


def l2_normalize(vector, eps=EPSILON):
    """Return vector scaled to unit length.

    Raises DegenerateVectorError when the norm is not above eps; the caller
    decides on a fallback.
    """
    vector = as_vector(vector)
    norm = l2_norm(vector)
    if not norm > eps:
        raise DegenerateVectorError(
            "cannot normalize vector with norm {!r}".format(norm)
        )
    return vector / norm


def mean_rows(vectors):
    """Return the elementwise mean of equally sized vectors.

    The sum runs left to right over the input order so the result is the
    same for the same list regardless of how it was produced.
    """
    vectors = [as_vector(vector) for vector in vectors]
    if not vectors:
        raise ValueError("mean_rows needs at least one vector")
    dims = {vector.shape[0] for vector in vectors}
    if len(dims) != 1:
        raise ValueError("mean_rows got vectors of dims {}".format(sorted(dims)))
    return reduce(np.add, vectors) / len(vectors)


def layer_norm(matrix, eps=LAYER_NORM_EPS):
    """Normalize each row to zero mean and unit variance."""
    centered = matrix - np.mean(matrix, axis=-1, keepdims=True)
    variance = np.mean(centered * centered, axis=-1, keepdims=True)
    return centered / np.sqrt(variance + eps)


def gelu(matrix):
    """Apply the tanh approximation of the GELU activation."""
    inner = 0.7978845608028654 * (matrix + 0.044715 * matrix ** 3)
    return 0.5 * matrix * (1.0 + np.tanh(inner))


def make_rng(seed, *stream):
    """Return a Philox generator for seed and an optional substream key.

    Substreams derived from the same seed with different keys are
    statistically independent, and identical (seed, key) pairs always give
    the same sequence.
    """
    if seed is None:
        raise ValueError("a seed is required for reproducible streams")
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(stream))
    return np.random.Generator(np.random.Philox(sequence))


def spawn_rngs(rng, count):
    """Return count independent child generators of rng."""
    return rng.spawn(count)


def scaled_gaussian(rng, shape, scale):
    """Draw a Gaussian array with the given standard deviation."""
    return rng.standard_normal(shape) * scale
