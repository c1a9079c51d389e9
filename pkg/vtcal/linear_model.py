# -*- coding: utf-8 -*-

"""
An analytic stand-in for the decoder whose hidden states split exactly.

At every layer l and query position i the hidden state is

    visual_effect(l, V) + shared_effect(l, query[:i + 1])

where the visual effect is a linear map of the sum-pooled vision tokens and
the shared effect collects everything the vision tokens do not touch (query
tokens and an intrinsic bias). Differencing two streams that share the query
therefore leaves only the visual effect difference.
"""

import logging

import numpy as np

from vtcal import numeric as num
from vtcal.common import BaseClass
from vtcal.htables import HIDDEN_DIM, NUM_LAYERS, VOCAB_SIZE

_LOGGER = logging.getLogger(__name__)


class LinearDiagnosticModel(BaseClass):
    """Hidden states built from per-layer linear effect maps."""

    def __init__(self, visual_maps, query_effects, bias_effects):
        """Initialize from (L, d, d), (L, vocab, d) and (L, d) arrays."""
        self.visual_maps = np.asarray(visual_maps, dtype=np.float64)
        self.query_effects = np.asarray(query_effects, dtype=np.float64)
        self.bias_effects = np.asarray(bias_effects, dtype=np.float64)
        layers, dim, width = self.visual_maps.shape
        if dim != width:
            raise ValueError("visual maps must be square, got {}".format(dim))
        if self.query_effects.shape[0] != layers or self.query_effects.shape[2] != dim:
            raise ValueError(
                "query effects shape {} does not fit visual maps {}".format(
                    self.query_effects.shape, self.visual_maps.shape
                )
            )
        if self.bias_effects.shape != (layers, dim):
            raise ValueError(
                "bias effects shape {} does not fit visual maps {}".format(
                    self.bias_effects.shape, self.visual_maps.shape
                )
            )

    def __repr__(self):
        """Return a short representation of the diagnostic model."""
        return "LinearDiagnosticModel(num_layers={}, hidden_dim={})".format(
            self.num_layers, self.hidden_dim
        )

    @property
    def num_layers(self):
        """Return the number of layers."""
        return self.visual_maps.shape[0]

    @property
    def hidden_dim(self):
        """Return the hidden width d."""
        return self.visual_maps.shape[1]

    def visual_effect(self, layer, vision):
        """Return the visual effect of a vision token matrix at layer."""
        vision = num.as_matrix(getattr(vision, "tokens", vision), "vision tokens")
        if vision.shape[1] != self.hidden_dim:
            raise ValueError(
                "vision tokens have width {}, model expects {}".format(
                    vision.shape[1], self.hidden_dim
                )
            )
        pooled = vision.sum(axis=0, keepdims=True)
        return num.matmul(pooled, self.visual_maps[layer - 1])[0]

    def shared_effect(self, layer, query):
        """Return the query and bias effect of a query prefix at layer."""
        ids = np.asarray(list(query), dtype=np.int64)
        effects = self.query_effects[layer - 1][ids].sum(axis=0)
        return self.bias_effects[layer - 1] + effects

    def hidden_states(self, vision, query, upto):
        """Return, for layers 1..upto, one hidden row per query position."""
        query = list(query)
        if not query:
            raise ValueError("the linear diagnostic model needs a query")
        if not 1 <= upto <= self.num_layers:
            raise ValueError(
                "layer {} out of range 1..{}".format(upto, self.num_layers)
            )
        states = []
        for layer in range(1, upto + 1):
            visual = self.visual_effect(layer, vision)
            rows = [
                visual + self.shared_effect(layer, query[: index + 1])
                for index in range(len(query))
            ]
            states.append(np.vstack(rows))
        return states

    def shift_shared(self, delta):
        """Return a copy whose shared effect is offset by delta at every layer."""
        delta = num.as_vector(delta, "shared offset")
        return LinearDiagnosticModel(
            self.visual_maps, self.query_effects, self.bias_effects + delta
        )


def build_linear_diagnostic(config=None, seed=0):
    """Return a seeded LinearDiagnosticModel sized like a decoder config."""
    layers = getattr(config, "num_layers", NUM_LAYERS)
    dim = getattr(config, "hidden_dim", HIDDEN_DIM)
    vocab = getattr(config, "vocab_size", VOCAB_SIZE)
    rng = num.make_rng(seed, 1)
    scale = 1.0 / np.sqrt(dim)
    model = LinearDiagnosticModel(
        num.scaled_gaussian(rng, (layers, dim, dim), scale),
        num.scaled_gaussian(rng, (layers, vocab, dim), 1.0),
        num.scaled_gaussian(rng, (layers, dim), 1.0),
    )
    _LOGGER.debug("Built %r from seed %d", model, seed)
    return model
