# -*- coding: utf-8 -*-

"""
Hidden-state calibration from pruned-token probe passes.

At step 0 the original context and K degraded contexts (the same query with
a random subset of the vision tokens) run through the shallow layers without
hooks. The per-layer difference of their probe-position states, averaged over
the K negatives, is a direction that the missing visual information explains.
From step 1 on, each generated position's state at layers 1..L is moved
along that direction in normalized space and rescaled to its original norm.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from vtcal import numeric as num
from vtcal.common import BaseClass, ConfigError, DegenerateVectorError
from vtcal.common import PersistenceError
from vtcal.decoder import HookSet
from vtcal.htables import EPSILON
from vtcal.vision import mask_image, prune_tokens

_LOGGER = logging.getLogger(__name__)


class ProbeCache(BaseClass):
    """Per-layer calibration directions computed once at step 0."""

    # pylint: disable=too-many-arguments
    def __init__(
        self,
        vectors,
        num_negatives,
        num_kept,
        position="last",
        created_step=0,
        fingerprint=None,
    ):
        """Initialize the cache; the vectors are copied and frozen."""
        if created_step != 0:
            raise ValueError(
                "probe caches are created at step 0, got step {}".format(created_step)
            )
        vectors = num.as_matrix(vectors, "probe directions").copy()
        vectors.flags.writeable = False
        self.vectors = vectors
        self.num_negatives = int(num_negatives)
        self.num_kept = int(num_kept)
        self.position = position
        self.created_step = 0
        self.fingerprint = fingerprint

    def __repr__(self):
        """Return a short representation of the cache."""
        return "ProbeCache(layers={}, dim={}, num_negatives={}, num_kept={})".format(
            self.num_layers, self.vectors.shape[1], self.num_negatives, self.num_kept
        )

    @property
    def num_layers(self):
        """Return how many layers the cache covers."""
        return self.vectors.shape[0]

    def direction(self, layer):
        """Return v_crc for a 1-based layer index."""
        return self.vectors[layer - 1]

    def save(self, path):
        """Write the cache as JSON; floats keep their exact value."""
        record = {
            "created_step": self.created_step,
            "fingerprint": self.fingerprint,
            "num_kept": self.num_kept,
            "num_negatives": self.num_negatives,
            "position": self.position,
            "vectors": self.vectors.tolist(),
        }
        try:
            with open(path, "w") as handle:
                json.dump(record, handle, sort_keys=True)
        except OSError as err:
            raise PersistenceError(
                "cannot write probe cache to {}: {}".format(path, err)
            )

    @classmethod
    def load(cls, path, fingerprint=None):
        """Read a cache; a given fingerprint must match the stored one."""
        try:
            with open(path) as handle:
                record = json.load(handle)
        except (OSError, ValueError) as err:
            raise PersistenceError("cannot read probe cache {}: {}".format(path, err))
        if fingerprint is not None and record.get("fingerprint") != fingerprint:
            raise PersistenceError(
                "probe cache {} belongs to config {}, not {}".format(
                    path, record.get("fingerprint"), fingerprint
                )
            )
        return cls(
            np.array(record["vectors"], dtype=np.float64),
            record["num_negatives"],
            record["num_kept"],
            record["position"],
            record["created_step"],
            record["fingerprint"],
        )


def make_negatives(vision, num_negatives, num_kept, rng):
    """Return num_negatives pruned copies, each from its own substream."""
    if num_negatives < 1:
        raise ValueError("num_negatives must be >= 1, got {}".format(num_negatives))
    if not 1 <= num_kept < len(vision):
        raise ValueError(
            "num_kept must be in 1..{}, got {}".format(len(vision) - 1, num_kept)
        )
    return [
        prune_tokens(vision, num_kept, child)
        for child in num.spawn_rngs(rng, num_negatives)
    ]


def make_masked_negatives(scene, encoder, num_negatives, fraction, rng):
    """Return encoded masked-image copies of a scene, one per substream."""
    if num_negatives < 1:
        raise ValueError("num_negatives must be >= 1, got {}".format(num_negatives))
    return [
        encoder.encode(mask_image(scene, fraction, child))
        for child in num.spawn_rngs(rng, num_negatives)
    ]


def probe_state(states, query_len, position="last"):
    """Return the probe vector of a hidden sequence."""
    if position == "last":
        return states[-1]
    if position == "query-mean":
        return num.mean_rows(list(states[-query_len:]))
    raise ConfigError("unknown probe position {!r}".format(position))


# pylint: disable=too-many-arguments
def probe_directions(
    model,
    vision,
    query,
    negatives,
    layer,
    position="last",
    workers=1,
    fingerprint=None,
):
    """Return the ProbeCache for an original context and its negatives.

    The model only needs ``hidden_states(vision, query, upto)``; all passes
    run without hooks. Passes may run in a thread pool but the average is
    always taken in negative order. The cache is stamped with fingerprint,
    the config it was computed under.
    """
    if not negatives:
        raise ValueError("probe_directions needs at least one negative")
    query = list(query)
    streams = [vision] + list(negatives)
    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as pool:
        results = list(
            pool.map(lambda tokens: model.hidden_states(tokens, query, layer), streams)
        )
    original, probes = results[0], results[1:]
    vectors = []
    for index in range(layer):
        reference = probe_state(original[index], len(query), position)
        deltas = [
            reference - probe_state(probe[index], len(query), position)
            for probe in probes
        ]
        vectors.append(num.mean_rows(deltas))
    cache = ProbeCache(
        np.vstack(vectors),
        len(negatives),
        len(negatives[0]),
        position,
        fingerprint=fingerprint,
    )
    for index, vector in enumerate(cache.vectors, start=1):
        if not num.l2_norm(vector) > EPSILON:
            _LOGGER.warning("Probe direction at layer %d is zero", index)
    _LOGGER.debug("Probed %d negatives over %d layers", len(negatives), layer)
    return cache


def calibrate_state(hidden, direction, strength, sign=1, eps=EPSILON):
    """Move a hidden vector along a direction, keeping its norm.

    >>> calibrate_state([1.0, 0.0], [0.0, 1.0], 0.1).round(5).tolist()
    [0.99504, 0.0995]
    """
    hidden = num.as_vector(hidden, "hidden state")
    if strength == 0.0:
        return hidden
    try:
        steer = num.l2_normalize(direction, eps)
    except DegenerateVectorError:
        return hidden
    return _steer(hidden, steer, strength, sign, eps)


def _steer(hidden, steer, strength, sign, eps):
    """Apply calibrate_state with an already normalized direction."""
    norm = num.l2_norm(hidden)
    if not norm > eps:
        raise DegenerateVectorError(
            "cannot normalize vector with norm {!r}".format(norm)
        )
    unit = hidden / norm
    moved = unit + sign * strength * steer
    moved_norm = num.l2_norm(moved)
    if moved_norm < eps:
        _LOGGER.warning(
            "Calibration cancelled the hidden state (strength %s); left unchanged",
            strength,
        )
        return hidden
    return moved / moved_norm * norm


class CrcHook(BaseClass):
    """Calibrate generated positions at one layer.

    prompt_len is N_v + N_q. Under incremental decoding each call holds the
    newest row only, so exactly the last position is edited at every step
    t > 0; a full recompute edits the same positions.
    """

    name = "crc"

    def __init__(self, cache, config, prompt_len):
        """Initialize the hook from a cache, a CalibConfig and N_v + N_q."""
        self.cache = cache
        self.config = config
        self.prompt_len = int(prompt_len)
        self.units = {}
        for layer in range(1, cache.num_layers + 1):
            try:
                self.units[layer] = num.l2_normalize(cache.direction(layer))
            except DegenerateVectorError:
                self.units[layer] = None

    def __repr__(self):
        """Return a short representation of the hook."""
        return "CrcHook(layers={}, strength={!r}, prompt_len={})".format(
            self.cache.num_layers, self.config.crc_strength, self.prompt_len
        )

    def __call__(self, layer, step, hidden, trace):
        """Return the rows with generated positions calibrated."""
        if self.config.crc_strength == 0.0:
            return hidden
        first = self.prompt_len - 1 if self.config.crc_first_step else self.prompt_len
        offset = self.prompt_len + step - len(hidden)
        rows = range(max(first - offset, 0), len(hidden))
        if not rows:
            return hidden
        steer = self.units[layer]
        if steer is None:
            return hidden
        calibrated = np.array(hidden)
        for row in rows:
            calibrated[row] = _steer(
                hidden[row],
                steer,
                self.config.crc_strength,
                self.config.crc_sign,
                EPSILON,
            )
        return calibrated


def crc_hooks(cache, config, prompt_len):
    """Return a HookSet calibrating layers 1..L with one shared hook."""
    if cache.num_layers != config.layer:
        raise ConfigError(
            "probe cache covers {} layers, config calibrates {}".format(
                cache.num_layers, config.layer
            )
        )
    hook = CrcHook(cache, config, prompt_len)
    hooks = HookSet()
    for layer in range(1, config.layer + 1):
        hooks.add(layer, hook)
    return hooks
