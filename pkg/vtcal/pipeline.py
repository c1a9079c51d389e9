# -*- coding: utf-8 -*-

"""Assemble the hook set of a run mode and answer yes/no questions with it."""

import logging

from vtcal import numeric as num
from vtcal.common import BaseClass
from vtcal.crc import crc_hooks, make_masked_negatives, make_negatives
from vtcal.crc import probe_directions
from vtcal.decoder import DecodeState, HookSet, next_token_logits
from vtcal.htables import ANSWER, ASK, NO, OBJECT_BASE, QMARK, YES, Mode
from vtcal.svc import build_bank, original_bank, svc_hook
from vtcal.vision import augment, mask_image

_LOGGER = logging.getLogger(__name__)


def make_query(object_id):
    """Return the token ids of 'is there an <object> ?'."""
    return [ASK, OBJECT_BASE + int(object_id), QMARK]


def masked_fraction(num_vision, num_kept):
    """Return the image share to mask so it matches the pruned token share."""
    return 1.0 - float(num_kept) / num_vision


class ContrastiveLogits(BaseClass):
    """Subtract the logits of a degraded-image stream from the main logits.

    The degraded stream shares the query and every generated token of the
    main stream and runs without hooks.
    """

    def __init__(self, negative, query, weight):
        """Initialize from degraded vision tokens, the query and a weight."""
        self.state = DecodeState(negative, query)
        self.weight = float(weight)

    def __repr__(self):
        """Return a short representation of the processor."""
        return "ContrastiveLogits(weight={!r})".format(self.weight)

    def __call__(self, model, state, logits):
        """Return (1 + w) * logits - w * degraded logits."""
        self.state.generated = list(state.generated)
        negative = next_token_logits(model, self.state)
        return (1.0 + self.weight) * logits - self.weight * negative


class Pipeline(BaseClass):
    """The hooks of one question and the probe cache they use, if any."""

    def __init__(self, mode, hooks, cache=None):
        """Initialize the pipeline."""
        self.mode = mode
        self.hooks = hooks
        self.cache = cache

    def __repr__(self):
        """Return a short representation of the pipeline."""
        return "Pipeline(mode={}, hooks={!r}, cache={!r})".format(
            self.mode, self.hooks, self.cache
        )


def _svc_hooks(model, scene, vision, encoder, calib, rng):
    if calib.svc_bank == "original":
        bank = original_bank(vision)
    else:
        view = augment(
            scene,
            rng,
            calib.flip_prob,
            calib.blur_radius,
            calib.noise_intensity,
            calib.salt_ratio,
        )
        bank = build_bank(vision, encoder.encode(view))
    return svc_hook(calib, bank, model.config.num_layers)


# pylint: disable=too-many-arguments
def _crc_hooks(
    model, scene, vision, query, encoder, calib, rng, cache=None, fingerprint=None
):
    calib.check_vision(len(vision))
    if cache is not None:
        return crc_hooks(cache, calib, len(vision) + len(query)), cache
    if calib.negative_source == "masked":
        negatives = make_masked_negatives(
            scene,
            encoder,
            calib.num_negatives,
            masked_fraction(len(vision), calib.num_kept),
            rng,
        )
    else:
        negatives = make_negatives(vision, calib.num_negatives, calib.num_kept, rng)
    cache = probe_directions(
        model,
        vision,
        query,
        negatives,
        calib.layer,
        calib.delta_position,
        calib.workers,
        fingerprint,
    )
    return crc_hooks(cache, calib, len(vision) + len(query)), cache


def assemble_pipeline(
    mode,
    calib,
    model,
    scene,
    vision,
    query,
    encoder,
    rng,
    cache=None,
    fingerprint=None,
):
    """Return the Pipeline of a mode for one scene and query.

    vanilla has no hooks, svc only the injection hook, crc the probe cache
    and its calibration hooks, unified the calibration hooks followed by the
    injection hook, and naive-combo the injection hook plus contrastive
    logits against a masked image.

    A given cache is reused instead of probing again; a new cache is
    stamped with fingerprint.
    """
    mode = Mode(mode)
    calib.check_model(model.config.num_layers)
    svc_rng, crc_rng, mask_rng = num.spawn_rngs(rng, 3)
    hooks = HookSet()
    given, cache = cache, None
    if mode in (Mode.CRC, Mode.UNIFIED):
        crc, cache = _crc_hooks(
            model, scene, vision, query, encoder, calib, crc_rng, given, fingerprint
        )
        hooks.update(crc)
    if mode in (Mode.SVC, Mode.UNIFIED, Mode.NAIVE_COMBO):
        hooks.update(_svc_hooks(model, scene, vision, encoder, calib, svc_rng))
    if mode is Mode.NAIVE_COMBO:
        fraction = masked_fraction(len(vision), calib.num_kept)
        masked = mask_image(scene, fraction, mask_rng)
        hooks.add_logit_processor(
            ContrastiveLogits(encoder.encode(masked), query, calib.contrast_weight)
        )
    _LOGGER.debug("Assembled %s pipeline with %d hooks", mode.value, len(hooks))
    return Pipeline(mode, hooks, cache)


def answer_logits(model, vision, query, hooks=None, use_cache=True):
    """Return the step-1 logits after the forced answer cue."""
    state = DecodeState(vision, query)
    next_token_logits(model, state, hooks, use_cache)
    state.append(ANSWER)
    return next_token_logits(model, state, hooks, use_cache)


def answer_question(model, vision, query, hooks=None, use_cache=True):
    """Return YES or NO by comparing their two logits; ties answer YES."""
    logits = answer_logits(model, vision, query, hooks, use_cache)
    return YES if logits[YES] >= logits[NO] else NO
