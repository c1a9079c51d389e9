# -*- coding: utf-8 -*-

"""
Visual context injection from a bank of original and augmented tokens.

The hidden rows of the layer below the calibration layer query the bank with
single-head, projection-free scaled dot-product attention; the resulting
visual context is interpolated into the calibration layer's output.
"""

import logging
import math

import numpy as np

from vtcal import numeric as num
from vtcal.common import BaseClass, ConfigError, HookError
from vtcal.decoder import HookSet
from vtcal.htables import Provenance

_LOGGER = logging.getLogger(__name__)


class SynergyBank(BaseClass):
    """Vision tokens stacked as [original; augmented]."""

    def __init__(self, original, augmented=None):
        """Initialize the bank; augmented may be None for an original-only bank."""
        self.original = original
        self.augmented = augmented
        blocks = [original.tokens]
        if augmented is not None:
            blocks.append(augmented.tokens)
        matrix = np.vstack(blocks)
        matrix.flags.writeable = False
        self.matrix = matrix

    def __repr__(self):
        """Return a short representation of the bank."""
        return "SynergyBank(rows={}, dim={}, augmented={})".format(
            self.matrix.shape[0], self.dim, self.augmented is not None
        )

    def __len__(self):
        """Return the number of bank rows."""
        return self.matrix.shape[0]

    @property
    def dim(self):
        """Return the token width d."""
        return self.matrix.shape[1]


def build_bank(vision, augmented):
    """Return the bank [V; V_aug] after checking widths and provenance."""
    if vision.provenance is not Provenance.ORIGINAL:
        raise ValueError(
            "bank needs original tokens first, got {}".format(vision.provenance.value)
        )
    if augmented.provenance is not Provenance.AUGMENTED:
        raise ValueError(
            "bank needs augmented tokens second, got {}".format(
                augmented.provenance.value
            )
        )
    if vision.dim != augmented.dim:
        raise ValueError(
            "token widths differ: {} vs {}".format(vision.dim, augmented.dim)
        )
    return SynergyBank(vision, augmented)


def original_bank(vision):
    """Return a bank holding only the original tokens."""
    if vision.provenance is not Provenance.ORIGINAL:
        raise ValueError(
            "bank needs original tokens, got {}".format(vision.provenance.value)
        )
    return SynergyBank(vision)


def _bank_matrix(bank):
    if isinstance(bank, SynergyBank):
        return bank.matrix
    return num.as_matrix(getattr(bank, "tokens", bank), "bank")


def attention_weights(hidden, bank):
    """Return softmax(H V^T / sqrt(d)), one distribution per hidden row."""
    hidden = num.as_matrix(hidden, "hidden states")
    matrix = _bank_matrix(bank)
    if hidden.shape[1] != matrix.shape[1]:
        raise ValueError(
            "hidden states {} do not match bank {}".format(hidden.shape, matrix.shape)
        )
    scores = num.matmul(hidden, matrix.T) / math.sqrt(hidden.shape[1])
    return num.softmax_rows(scores)


def visual_context(hidden, bank):
    """Return the visual context rows C = attention_weights(H, bank) @ bank."""
    matrix = _bank_matrix(bank)
    return num.matmul(attention_weights(hidden, matrix), matrix)


def blend(hidden, context, strength):
    """Return (1 - strength) * hidden + strength * context."""
    if not 0.0 <= strength <= 1.0:
        raise ValueError("blend strength must be in [0, 1], got {}".format(strength))
    if np.shape(hidden) != np.shape(context):
        raise ValueError(
            "cannot blend {} with {}".format(np.shape(hidden), np.shape(context))
        )
    if strength == 0.0:
        return hidden
    return (1.0 - strength) * hidden + strength * context


class SvcHook(BaseClass):
    """Blend visual context into the hidden rows of one layer."""

    name = "svc"

    def __init__(self, bank, config):
        """Initialize the hook from a bank and a CalibConfig."""
        self.bank = bank
        self.config = config

    def __repr__(self):
        """Return a short representation of the hook."""
        return "SvcHook(layer={}, placement={}, strength={!r})".format(
            self.layer, self.config.svc_placement, self.config.svc_strength
        )

    @property
    def layer(self):
        """Return the layer after which the hook runs."""
        if self.config.svc_placement == "pre":
            return self.config.layer - 1
        return self.config.layer

    def __call__(self, layer, step, hidden, trace):
        """Return the blended rows of this forward call."""
        if step == 0 and not self.config.svc_first_step:
            return hidden
        if self.config.svc_placement == "pre":
            query = hidden
        else:
            if layer - 1 not in trace:
                raise HookError(
                    "svc hook at layer {} found no layer {} output".format(
                        layer, layer - 1
                    )
                )
            query = trace[layer - 1]
        if query.shape != hidden.shape:
            raise HookError(
                "svc query rows {} do not match hidden rows {}".format(
                    query.shape, hidden.shape
                )
            )
        context = visual_context(query, self.bank)
        _LOGGER.debug(
            "SVC blend at layer %d, step %d, %d rows", layer, step, len(hidden)
        )
        return blend(hidden, context, self.config.svc_strength)


def svc_hook(config, bank, num_layers=None):
    """Return a HookSet holding the SVC hook at its layer."""
    if num_layers is not None:
        config.check_model(num_layers)
    if bank.dim <= 0 or not len(bank):
        raise ConfigError("svc bank is empty")
    hook = SvcHook(bank, config)
    return HookSet().add(hook.layer, hook)
