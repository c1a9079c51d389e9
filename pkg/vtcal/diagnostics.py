# -*- coding: utf-8 -*-

"""
Measurements behind the calibration method.

- how much attention the generated positions pay to the vision tokens as
  decoding goes on;
- how differently the original and augmented tokens are attended to;
- how far pruned-token and masked-image probes land from the original
  hidden state;
- what the calibration pipeline costs per token;
- how task accuracy falls as vision tokens are pruned away.
"""

import logging
import time
from collections import namedtuple

import numpy as np
from scipy import stats

from vtcal import numeric as num
from vtcal.common import BaseClass, ConfigError
from vtcal.crc import probe_state
from vtcal.decoder import DecodeState, build_model, greedy_decode, next_token_logits
from vtcal.harness import answer_task
from vtcal.htables import CALIBRATION_LAYER, Mode
from vtcal.pipeline import assemble_pipeline, masked_fraction
from vtcal.svc import attention_weights
from vtcal.vision import mask_image, num_vision_tokens, prune_tokens

_LOGGER = logging.getLogger(__name__)

DistanceEntry = namedtuple("DistanceEntry", "layer, kind, sample, distance")
PruningPoint = namedtuple("PruningPoint", "num_kept, accuracy, low, high")


class AttentionTrace(BaseClass):
    """Vision attention mass per generated position, for steps t = 1..T."""

    def __init__(self, masses, layer, num_vision):
        """Initialize the trace."""
        self.masses = [float(mass) for mass in masses]
        self.layer = int(layer)
        self.num_vision = int(num_vision)

    def __repr__(self):
        """Return a short representation of the trace."""
        return "AttentionTrace(layer={}, steps={})".format(self.layer, len(self.masses))

    def trend(self):
        """Return Kendall's tau of mass against step; 0.0 for a flat trace."""
        if len(self.masses) < 2 or np.ptp(self.masses) == 0:
            return 0.0
        tau = stats.kendalltau(np.arange(len(self.masses)), self.masses)[0]
        return float(tau)


def trace_visual_attention(model, vision, query, max_new=32, layer=CALIBRATION_LAYER):
    """Return the head-averaged vision attention mass of a vanilla decode.

    Entry t - 1 is the mass the position predicting token t puts on the
    vision columns, so the first entry comes from the prefill's last row.
    """
    state = DecodeState(vision, query)
    state.record_attention = True
    masses = []
    for _ in range(max_new):
        logits = next_token_logits(model, state)
        weights = state.attention[layer]
        masses.append(weights[:, : state.num_vision].sum(axis=1).mean())
        state.append(int(np.argmax(logits)))
    return AttentionTrace(np.clip(masses, 0.0, 1.0), layer, state.num_vision)


def complementarity_overlap(vision, augmented, hidden):
    """Return the mean cosine similarity of the two attention distributions.

    Each hidden row attends to the original and to the augmented tokens
    separately; 1.0 means the same focus and 0.0 disjoint focus.
    """
    first = attention_weights(hidden, vision)
    second = attention_weights(hidden, augmented)
    if first.shape != second.shape:
        raise ValueError(
            "token sets differ in size: {} vs {}".format(first.shape, second.shape)
        )
    norms = np.linalg.norm(first, axis=1) * np.linalg.norm(second, axis=1)
    cosines = np.sum(first * second, axis=1) / norms
    return float(np.clip(np.mean(cosines), 0.0, 1.0))


class DistanceReport(BaseClass):
    """Distances from the original probe state to degraded probe states."""

    def __init__(self, entries):
        """Initialize from DistanceEntry tuples."""
        self.entries = [DistanceEntry(*entry) for entry in entries]

    def __repr__(self):
        """Return a short representation of the report."""
        return "DistanceReport(entries={})".format(len(self.entries))

    def __len__(self):
        """Return the number of entries."""
        return len(self.entries)

    def distances(self, kind, layer):
        """Return the distances of one kind at one layer."""
        return [e.distance for e in self.entries if e.kind == kind and e.layer == layer]

    def mean(self, kind, layer):
        """Return the mean distance of one kind at one layer."""
        return float(np.mean(self.distances(kind, layer)))


# pylint: disable=too-many-arguments,too-many-locals
def distance_report(model, scene, vision, query, config, encoder, rng, num_kept=None):
    """Compare K pruned and K masked-image probes at layers 1..L.

    The masked share of the image matches the pruned share of the tokens.
    """
    num_kept = config.num_kept if num_kept is None else num_kept
    pruned_rng, masked_rng = num.spawn_rngs(rng, 2)
    fraction = masked_fraction(len(vision), num_kept)
    negatives = {
        "pruned": [
            prune_tokens(vision, num_kept, child)
            for child in num.spawn_rngs(pruned_rng, config.num_negatives)
        ],
        "masked": [
            encoder.encode(
                mask_image(scene, max(fraction, 1e-9), child)
            )
            for child in num.spawn_rngs(masked_rng, config.num_negatives)
        ],
    }
    query = list(query)
    reference = model.hidden_states(vision, query, config.layer)
    entries = []
    for kind in ("pruned", "masked"):
        for sample, tokens in enumerate(negatives[kind]):
            states = model.hidden_states(tokens, query, config.layer)
            for layer in range(1, config.layer + 1):
                delta = probe_state(
                    reference[layer - 1], len(query), config.delta_position
                ) - probe_state(states[layer - 1], len(query), config.delta_position)
                entries.append(DistanceEntry(layer, kind, sample, num.l2_norm(delta)))
    return DistanceReport(entries)


def bootstrap_interval(values, seed=0, confidence=0.95):
    """Return the percentile bootstrap interval of the mean of values."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2 or np.ptp(values) == 0:
        mean = float(np.mean(values))
        return mean, mean
    result = stats.bootstrap(
        (values,),
        np.mean,
        confidence_level=confidence,
        method="percentile",
        random_state=num.make_rng(seed, 5),
    )
    return float(result.confidence_interval.low), float(result.confidence_interval.high)


def distance_gap(reports, layer, seed=0):
    """Return the mean masked-minus-pruned distance and its bootstrap interval."""
    gaps = [
        report.mean("masked", layer) - report.mean("pruned", layer)
        for report in reports
    ]
    low, high = bootstrap_interval(gaps, seed)
    return float(np.mean(gaps)), low, high


class OverheadReport(BaseClass):
    """Wall-clock cost of the calibration pipeline against vanilla decoding."""

    def __init__(self, max_new, vanilla, pipeline, probe):
        """Initialize from per-token decode times and the one-time setup time."""
        self.max_new = int(max_new)
        self.vanilla = float(vanilla)
        self.pipeline = float(pipeline)
        self.probe = float(probe)

    def __repr__(self):
        """Return a short representation of the report."""
        return "OverheadReport(max_new={}, ratio={:.3f}, probe={:.6f})".format(
            self.max_new, self.ratio, self.probe
        )

    @property
    def ratio(self):
        """Return steady-state pipeline time per token over vanilla."""
        return self.pipeline / self.vanilla if self.vanilla > 0 else float("inf")

    @property
    def amortized_probe(self):
        """Return the one-time setup cost spread over the generated tokens."""
        return self.probe / self.max_new

    def as_dict(self):
        """Return the JSON-ready report."""
        return {
            "amortized_probe": self.amortized_probe,
            "max_new": self.max_new,
            "pipeline_per_token": self.pipeline,
            "probe_seconds": self.probe,
            "ratio": self.ratio,
            "vanilla_per_token": self.vanilla,
        }


# pylint: disable=too-many-arguments
def measure_overhead(
    model,
    scene,
    vision,
    query,
    config,
    encoder,
    max_new,
    mode=Mode.UNIFIED,
    seed=0,
    repeats=3,
):
    """Time vanilla decoding against a calibrated decode of max_new tokens.

    One warm-up round is discarded; each figure is the fastest of repeats.
    CalibConfig rejects num_negatives=0, so the no-op pipeline is measured
    with mode=Mode.VANILLA: it assembles no hooks and its ratio is 1 up to
    timing noise.
    """

    def build():
        rng = num.make_rng(seed, 6)
        return assemble_pipeline(
            mode, config, model, scene, vision, query, encoder, rng
        )

    def clock(func):
        started = time.perf_counter()
        value = func()
        return time.perf_counter() - started, value

    greedy_decode(model, vision, query, None, max_new, end_token=None)
    greedy_decode(model, vision, query, build().hooks, max_new, end_token=None)
    vanilla, pipeline, probe = [], [], []
    for _ in range(max(1, repeats)):
        vanilla.append(
            clock(
                lambda: greedy_decode(
                    model, vision, query, None, max_new, end_token=None
                )
            )[0]
        )
        seconds, built = clock(build)
        probe.append(seconds)
        pipeline.append(
            clock(
                lambda: greedy_decode(  # pylint: disable=cell-var-from-loop
                    model, vision, query, built.hooks, max_new, end_token=None
                )
            )[0]
        )
    report = OverheadReport(
        max_new, min(vanilla) / max_new, min(pipeline) / max_new, min(probe)
    )
    _LOGGER.info("Overhead %r", report)
    return report


def check_kept_grid(grid, num_vision=None):
    """Raise ConfigError unless every count lies in 1..num_vision."""
    num_vision = num_vision if num_vision is not None else num_vision_tokens()
    if not grid:
        raise ConfigError("the kept-token grid is empty")
    for num_kept in grid:
        if not 1 <= num_kept <= num_vision:
            raise ConfigError(
                "kept-token counts must be in 1..{}, got {}".format(
                    num_vision, num_kept
                )
            )


def pruning_sweep(config, task, grid, model=None, seed=0):
    """Return vanilla accuracy when the model sees only num_kept vision tokens."""
    check_kept_grid(grid)
    model = model if model is not None else build_model(config.decoder)
    run = config.replace(mode=Mode.VANILLA)
    points = []
    for num_kept in grid:

        def keep(vision, rng, count=num_kept):
            return prune_tokens(vision, count, rng)

        outcomes = answer_task(run, task, model, keep)
        correct = [
            float(truth == answer)
            for truths, answers in outcomes.values()
            for truth, answer in zip(truths, answers)
        ]
        low, high = bootstrap_interval(correct, seed)
        points.append(PruningPoint(num_kept, float(np.mean(correct)), low, high))
        _LOGGER.info("Kept %d tokens: accuracy %.3f", num_kept, points[-1].accuracy)
    return points


def pruning_trend(points):
    """Return Kendall's tau of accuracy against tokens kept."""
    accuracies = [point.accuracy for point in points]
    if len(points) < 2 or np.ptp(accuracies) == 0:
        return 0.0
    return float(stats.kendalltau([p.num_kept for p in points], accuracies)[0])
