# -*- coding: utf-8 -*-

"""
A small multimodal transformer decoder with per-layer intervention hooks.

The context is a prefix of vision tokens followed by query token ids, then the
ids generated so far. Layers are pre-norm residual blocks (causal multi-head
self-attention, then a GELU feed-forward). Positions enter only through ALiBi
attention biases, so no positional vector is ever added to the hidden stream
and streams of different lengths stay comparable position by position.
"""

import json
import logging
import math
from collections import namedtuple

import numpy as np

from vtcal import numeric as num
from vtcal.common import BaseClass, ConfigError, HookError, PersistenceError
from vtcal.common import hook_name
from vtcal.htables import (
    ABSENCE_WEIGHT,
    CHROMA_COLUMNS,
    CHROMA_FLOOR,
    EOS,
    EPSILON,
    EVIDENCE_COLUMN,
    FFN_MULT,
    GROUNDING_SHARPNESS,
    HIDDEN_DIM,
    MAX_SEQ,
    NO,
    NUM_HEADS,
    NUM_LAYERS,
    OBJECT_BASE,
    OBJECT_STYLES,
    READOUT_GAIN,
    RESERVED_COLUMNS,
    RESERVED_DIMS,
    VOCAB_SIZE,
    YES,
    hue_direction,
)

_LOGGER = logging.getLogger(__name__)

LayerWeights = namedtuple("LayerWeights", "wq, wk, wv, wo, w1, w2")


class DecoderConfig(BaseClass):
    """Shape and initialization settings of the toy decoder."""

    # pylint: disable=too-many-arguments
    def __init__(
        self,
        num_layers=NUM_LAYERS,
        hidden_dim=HIDDEN_DIM,
        num_heads=NUM_HEADS,
        vocab_size=VOCAB_SIZE,
        max_seq=MAX_SEQ,
        prior_bias_strength=0.0,
        seed=0,
        attn_scale=0.5,
        resid_scale=0.5,
    ):
        """Initialize and validate the decoder configuration."""
        self.num_layers = int(num_layers)
        self.hidden_dim = int(hidden_dim)
        self.num_heads = int(num_heads)
        self.vocab_size = int(vocab_size)
        self.max_seq = int(max_seq)
        self.prior_bias_strength = float(prior_bias_strength)
        self.seed = int(seed)
        self.attn_scale = float(attn_scale)
        self.resid_scale = float(resid_scale)
        self._validate()

    def _validate(self):
        if self.num_layers < 2:
            raise ConfigError("num_layers must be >= 2, got {}".format(self.num_layers))
        if self.hidden_dim <= RESERVED_DIMS:
            raise ConfigError(
                "hidden_dim must be > {}, got {}".format(RESERVED_DIMS, self.hidden_dim)
            )
        if self.num_heads < 1 or self.hidden_dim % self.num_heads:
            raise ConfigError(
                "hidden_dim {} is not divisible by num_heads {}".format(
                    self.hidden_dim, self.num_heads
                )
            )
        if self.vocab_size <= max(YES, NO, EOS):
            raise ConfigError("vocab_size {} is too small".format(self.vocab_size))
        if self.prior_bias_strength < 0:
            raise ConfigError(
                "prior_bias_strength must be >= 0, got {}".format(
                    self.prior_bias_strength
                )
            )

    def __repr__(self):
        """Return a representation of DecoderConfig for programmatic use."""
        return (
            "DecoderConfig(num_layers={}, hidden_dim={}, num_heads={}, "
            "vocab_size={}, max_seq={}, prior_bias_strength={!r}, seed={}, "
            "attn_scale={!r}, resid_scale={!r})".format(
                self.num_layers,
                self.hidden_dim,
                self.num_heads,
                self.vocab_size,
                self.max_seq,
                self.prior_bias_strength,
                self.seed,
                self.attn_scale,
                self.resid_scale,
            )
        )

    @property
    def head_dim(self):
        """Return the width of one attention head."""
        return self.hidden_dim // self.num_heads

    def as_dict(self):
        """Return the configuration as a plain dictionary."""
        return dict(self.__dict__)


class DecoderModel(BaseClass):
    """Weights of the toy decoder; read-only once built.

    Final logits are ``layer_norm(h) @ output + h @ readout``. The readout
    only reads the evidence coordinate, which the normalized path cannot
    keep on an absolute scale.
    """

    # pylint: disable=too-many-arguments
    def __init__(self, config, embedding, layers, output, prior_bias, readout):
        """Initialize the model from explicit weights."""
        self.config = config
        self.embedding = _frozen(embedding)
        self.layers = tuple(
            LayerWeights(*[_frozen(weight) for weight in layer]) for layer in layers
        )
        self.output = _frozen(output)
        self.prior_bias = _frozen(prior_bias)
        self.readout = _frozen(readout)
        self._check_shapes()

    def __repr__(self):
        """Return a short representation of the model."""
        return "DecoderModel(config={!r})".format(self.config)

    def _check_shapes(self):
        cfg = self.config
        d, ffn = cfg.hidden_dim, cfg.hidden_dim * FFN_MULT
        expected = LayerWeights((d, d), (d, d), (d, d), (d, d), (d, ffn), (ffn, d))
        if len(self.layers) != cfg.num_layers:
            raise ConfigError(
                "model has {} layers, config says {}".format(
                    len(self.layers), cfg.num_layers
                )
            )
        for layer in self.layers:
            for name, weight, shape in zip(LayerWeights._fields, layer, expected):
                if weight.shape != shape:
                    raise ConfigError(
                        "{} has shape {}, expected {}".format(name, weight.shape, shape)
                    )
        if self.embedding.shape != (cfg.vocab_size, d):
            raise ConfigError("embedding shape {}".format(self.embedding.shape))
        if self.output.shape != (d, cfg.vocab_size):
            raise ConfigError("output shape {}".format(self.output.shape))
        if self.readout.shape != (d, cfg.vocab_size):
            raise ConfigError("readout shape {}".format(self.readout.shape))
        if self.prior_bias.shape != (cfg.vocab_size,):
            raise ConfigError("prior bias shape {}".format(self.prior_bias.shape))

    @property
    def slopes(self):
        """Return the per-head ALiBi slopes."""
        heads = self.config.num_heads
        return np.array([2.0 ** (-8.0 * (h + 1) / heads) for h in range(heads)])

    def embed(self, ids):
        """Return the embedding rows of a list of token ids."""
        ids = np.asarray(list(ids), dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ValueError("token ids out of range: {}".format(ids.tolist()))
        return self.embedding[ids].reshape(len(ids), self.config.hidden_dim)

    def with_prior_strength(self, strength):
        """Return a model sharing these weights with another bias strength."""
        values = dict(self.config.as_dict(), prior_bias_strength=strength)
        return DecoderModel(
            DecoderConfig(**values),
            self.embedding,
            self.layers,
            self.output,
            self.prior_bias,
            self.readout,
        )

    def hidden_states(self, vision, query, upto):
        """Return hook-free hidden sequences of layers 1..upto for a context."""
        state = DecodeState(vision, query)
        trace = _forward(self, state, None, upto, 0, use_cache=False)
        return [trace[layer] for layer in range(1, upto + 1)]

    def save(self, path):
        """Write weights and config to an .npz file."""
        arrays = {
            "config": np.array(json.dumps(self.config.as_dict(), sort_keys=True)),
            "embedding": self.embedding,
            "output": self.output,
            "prior_bias": self.prior_bias,
            "readout": self.readout,
        }
        for index, layer in enumerate(self.layers, start=1):
            for name, weight in zip(LayerWeights._fields, layer):
                arrays["layer{}_{}".format(index, name)] = weight
        try:
            with open(path, "wb") as handle:
                np.savez(handle, **arrays)
        except OSError as err:
            raise PersistenceError("cannot write model to {}: {}".format(path, err))
        _LOGGER.debug("Saved model to %s", path)

    @classmethod
    def load(cls, path):
        """Read a model written by save."""
        try:
            with np.load(path, allow_pickle=False) as data:
                config = DecoderConfig(**json.loads(str(data["config"])))
                layers = [
                    LayerWeights(
                        *[
                            data["layer{}_{}".format(index, name)]
                            for name in LayerWeights._fields
                        ]
                    )
                    for index in range(1, config.num_layers + 1)
                ]
                return cls(
                    config,
                    data["embedding"],
                    layers,
                    data["output"],
                    data["prior_bias"],
                    data["readout"],
                )
        except (OSError, KeyError, ValueError) as err:
            raise PersistenceError("cannot read model from {}: {}".format(path, err))


def _frozen(array):
    array = np.array(array, dtype=np.float64)
    array.flags.writeable = False
    return array


def build_model(config):
    """Build a seeded random decoder; no training happens anywhere.

    The random weights never write the reserved coordinates. Object tokens
    carry their hue in the chroma coordinates, and the YES and NO output
    columns are equal, so the answer gap comes from the readout of the
    evidence coordinate and from the prior alone.
    """
    rng = num.make_rng(config.seed)
    d, ffn = config.hidden_dim, config.hidden_dim * FFN_MULT
    embedding = num.scaled_gaussian(rng, (config.vocab_size, d), 1.0)
    embedding[:, RESERVED_COLUMNS] = 0.0
    objects = min(len(OBJECT_STYLES), config.vocab_size - OBJECT_BASE)
    for index in range(max(objects, 0)):
        embedding[OBJECT_BASE + index, CHROMA_COLUMNS] = hue_direction(index)
    layers = []
    for _ in range(config.num_layers):
        layer = LayerWeights(
            wq=num.scaled_gaussian(rng, (d, d), config.attn_scale / math.sqrt(d)),
            wk=num.scaled_gaussian(rng, (d, d), config.attn_scale / math.sqrt(d)),
            wv=num.scaled_gaussian(rng, (d, d), 1.0 / math.sqrt(d)),
            wo=num.scaled_gaussian(rng, (d, d), config.resid_scale / math.sqrt(d)),
            w1=num.scaled_gaussian(rng, (d, ffn), 1.0 / math.sqrt(d)),
            w2=num.scaled_gaussian(rng, (ffn, d), config.resid_scale / math.sqrt(ffn)),
        )
        layer.wo[:, RESERVED_COLUMNS] = 0.0
        layer.w2[:, RESERVED_COLUMNS] = 0.0
        layers.append(layer)
    output = num.scaled_gaussian(rng, (d, config.vocab_size), 1.0 / math.sqrt(d))
    output[:, NO] = output[:, YES]
    # The prior leans towards affirmative answers, like a language prior.
    prior_bias = num.scaled_gaussian(rng, (config.vocab_size,), 1.0)
    prior_bias[YES] = 1.0
    prior_bias[NO] = -1.0
    readout = np.zeros((d, config.vocab_size))
    readout[EVIDENCE_COLUMN, YES] = READOUT_GAIN / 2.0
    readout[EVIDENCE_COLUMN, NO] = -READOUT_GAIN / 2.0
    _LOGGER.debug("Built decoder %r", config)
    return DecoderModel(config, embedding, layers, output, prior_bias, readout)


class DecodeState(BaseClass):
    """Mutable decoding state owned by a single decode."""

    def __init__(self, vision, query, generated=()):
        """Initialize the state from vision tokens and query ids."""
        self.vision = num.as_matrix(getattr(vision, "tokens", vision), "vision tokens")
        self.query = [int(token) for token in query]
        self.generated = [int(token) for token in generated]
        self.hidden = {}
        self.cache = {}
        self.attention = {}
        self.record_attention = False
        if not len(self.vision) + len(self.query):
            raise ValueError("decode context is empty")

    def __repr__(self):
        """Return a short representation of the state."""
        return "DecodeState(vision_rows={}, query={}, generated={})".format(
            len(self.vision), self.query, self.generated
        )

    @property
    def step(self):
        """Return the generation step t (number of generated tokens)."""
        return len(self.generated)

    @property
    def num_vision(self):
        """Return N_v."""
        return len(self.vision)

    @property
    def seq_len(self):
        """Return N_v + N_q + t."""
        return len(self.vision) + len(self.query) + len(self.generated)

    @property
    def cached_length(self):
        """Return how many positions the key/value cache covers."""
        if not self.cache:
            return 0
        return self.cache[1][0].shape[1]

    def inputs(self, model):
        """Return the input rows H^(0) of the whole sequence."""
        if self.vision.shape[1] != model.config.hidden_dim:
            raise ValueError(
                "vision tokens have width {}, model expects {}".format(
                    self.vision.shape[1], model.config.hidden_dim
                )
            )
        text = model.embed(self.query + self.generated)
        return np.vstack([self.vision, text])

    def append(self, token):
        """Record a generated token."""
        self.generated.append(int(token))

    def reset(self):
        """Drop cached keys, values, hidden states and attention."""
        self.hidden = {}
        self.cache = {}
        self.attention = {}


class HookSet(BaseClass):
    """Post-layer hooks keyed by layer index, plus final logit processors.

    A hook is called as ``hook(layer, step, hidden, trace)`` where hidden are
    the rows computed by this forward call at that layer and trace maps each
    lower layer (0 is the input) to its post-hook rows of the same call. It
    returns rows of the same shape. Hooks at one layer run in the order they
    were added.
    """

    def __init__(self):
        """Initialize an empty hook set."""
        self.hooks = {}
        self.logit_processors = []

    def __repr__(self):
        """Return a representation listing hooked layers."""
        return "HookSet(layers={}, logit_processors={})".format(
            sorted(self.hooks), len(self.logit_processors)
        )

    def __len__(self):
        """Return the number of registered layer hooks."""
        return sum(len(hooks) for hooks in self.hooks.values())

    def add(self, layer, hook):
        """Register hook after layer."""
        self.hooks.setdefault(int(layer), []).append(hook)
        return self

    def update(self, other):
        """Append every hook and processor of another hook set."""
        for layer in sorted(other.hooks):
            for hook in other.hooks[layer]:
                self.add(layer, hook)
        self.logit_processors.extend(other.logit_processors)
        return self

    def add_logit_processor(self, processor):
        """Register ``processor(model, state, logits) -> logits``."""
        self.logit_processors.append(processor)
        return self

    @property
    def touches_logits(self):
        """Return True if any processor edits the final logits."""
        return bool(self.logit_processors)

    def apply(self, layer, step, hidden, trace):
        """Run the hooks registered at layer."""
        for hook in self.hooks.get(layer, ()):
            result = hook(layer, step, hidden, trace)
            if not isinstance(result, np.ndarray) or result.shape != hidden.shape:
                raise HookError(
                    "hook {} at layer {} returned {} for input shape {}".format(
                        hook_name(hook),
                        layer,
                        getattr(result, "shape", type(result).__name__),
                        hidden.shape,
                    )
                )
            hidden = result
        return hidden

    def process_logits(self, model, state, logits):
        """Run the logit processors in order."""
        for processor in self.logit_processors:
            logits = processor(model, state, logits)
        return logits


def _split_heads(matrix, heads):
    rows, width = matrix.shape
    return matrix.reshape(rows, heads, width // heads).transpose(1, 0, 2)


def _merge_heads(tensor):
    heads, rows, width = tensor.shape
    return tensor.transpose(1, 0, 2).reshape(rows, heads * width)


def _alibi(slopes, start, rows, total):
    """Return causal ALiBi biases of shape (heads, rows, total)."""
    distance = np.arange(start, start + rows)[:, None] - np.arange(total)[None, :]
    bias = -slopes[:, None, None] * distance[None, :, :]
    bias[:, distance < 0] = -np.inf
    return bias


def _layer_forward(model, layer, rows, past, start):
    """Run one block over new rows, attending to cached keys and values."""
    weights = model.layers[layer - 1]
    heads = model.config.num_heads
    normed = num.layer_norm(rows)
    query = _split_heads(num.matmul(normed, weights.wq), heads)
    keys = _split_heads(num.matmul(normed, weights.wk), heads)
    values = _split_heads(num.matmul(normed, weights.wv), heads)
    if past is not None:
        keys = np.concatenate([past[0], keys], axis=1)
        values = np.concatenate([past[1], values], axis=1)
    scores = query @ keys.transpose(0, 2, 1) / math.sqrt(model.config.head_dim)
    scores = scores + _alibi(model.slopes, start, len(rows), keys.shape[1])
    probs = num.softmax(scores, axis=-1)
    rows = rows + num.matmul(_merge_heads(probs @ values), weights.wo)
    hidden = num.gelu(num.matmul(num.layer_norm(rows), weights.w1))
    rows = rows + num.matmul(hidden, weights.w2)
    return rows, (keys, values), probs


def grounding_evidence(inputs, num_vision):
    """Return the evidence that the asked object is visible, per position.

    The asked hue of a text position is the summed chroma of the text rows up
    to it. Each vision token votes ``exp(k * (cos - 1)) - w`` for that hue,
    where cos compares the token's chroma direction with the asked hue. Vision
    rows and text rows with no asked hue get zero evidence.
    """
    chroma = inputs[:, CHROMA_COLUMNS]
    vision = chroma[:num_vision]
    floor = np.maximum(np.linalg.norm(vision, axis=1), CHROMA_FLOOR)
    hues = vision / floor[:, None]
    asked = np.cumsum(chroma[num_vision:], axis=0)
    norms = np.linalg.norm(asked, axis=1)
    evidence = np.zeros(len(inputs))
    valid = np.flatnonzero(norms > EPSILON)
    if valid.size and num_vision:
        units = asked[valid] / norms[valid, None]
        cosines = num.matmul(units, hues.T)
        votes = np.exp(GROUNDING_SHARPNESS * (cosines - 1.0)) - ABSENCE_WEIGHT
        evidence[num_vision + valid] = votes.sum(axis=1)
    return evidence


def _forward(model, state, hooks, upto, start, use_cache):
    """Run layers 1..upto over positions start.. of the state."""
    if state.seq_len > model.config.max_seq:
        raise ValueError(
            "sequence length {} exceeds max_seq {}".format(
                state.seq_len, model.config.max_seq
            )
        )
    inputs = state.inputs(model)
    rows = inputs[start:]
    trace = {0: rows}
    for layer in range(1, upto + 1):
        past = state.cache.get(layer) if use_cache and start else None
        rows, present, probs = _layer_forward(model, layer, rows, past, start)
        if layer == 1:
            evidence = grounding_evidence(inputs, state.num_vision)
            rows[:, EVIDENCE_COLUMN] += evidence[start:]
        if hooks is not None:
            rows = hooks.apply(layer, state.step, rows, trace)
        num.check_finite(rows, "layer {} output".format(layer))
        trace[layer] = rows
        if use_cache:
            state.cache[layer] = present
        if state.record_attention:
            state.attention[layer] = probs[:, -1, :]
        if start and layer in state.hidden:
            state.hidden[layer] = np.vstack([state.hidden[layer][:start], rows])
        else:
            state.hidden[layer] = rows
    return trace


def forward_to_layer(model, state, layer, hooks=None):
    """Return H_t^(layer) of the full sequence, recomputed from the inputs.

    Hooks registered at layers up to and including layer are applied in
    ascending layer order. The key/value cache is left untouched.
    """
    if not 1 <= layer <= model.config.num_layers:
        raise ValueError(
            "layer {} out of range 1..{}".format(layer, model.config.num_layers)
        )
    trace = _forward(model, state, hooks, layer, 0, use_cache=False)
    return trace[layer]


def final_logits(model, hidden_row):
    """Return the prior-free logits of one final-layer hidden row."""
    row = hidden_row[None, :]
    logits = num.matmul(num.layer_norm(row), model.output) + num.matmul(
        row, model.readout
    )
    return logits[0]


def next_token_logits(model, state, hooks=None, use_cache=True):
    """Return next-token logits at the final position.

    With use_cache only positions not yet in the key/value cache are run;
    otherwise the whole sequence is recomputed. The prior-bias vector scaled
    by the configured strength is added before logit processors run.
    """
    start = state.cached_length if use_cache else 0
    if start > state.seq_len:
        raise ValueError("cache covers more positions than the sequence holds")
    if start == state.seq_len:
        last = state.hidden[model.config.num_layers][-1]
    else:
        trace = _forward(model, state, hooks, model.config.num_layers, start, use_cache)
        last = trace[model.config.num_layers][-1]
        _LOGGER.debug(
            "Step %d ran positions %d..%d", state.step, start, state.seq_len - 1
        )
    prior = model.config.prior_bias_strength * model.prior_bias
    logits = final_logits(model, last) + prior
    if hooks is not None and hooks.touches_logits:
        logits = hooks.process_logits(model, state, logits)
    return num.check_finite(logits, "logits")


def decode(model, state, hooks=None, max_new=1, use_cache=True, end_token=EOS):
    """Greedily extend state by up to max_new tokens and return them."""
    if max_new < 1:
        raise ValueError("max_new must be >= 1, got {}".format(max_new))
    produced = []
    for _ in range(max_new):
        logits = next_token_logits(model, state, hooks, use_cache)
        # np.argmax returns the first maximum: ties go to the lowest id.
        token = int(np.argmax(logits))
        state.append(token)
        produced.append(token)
        if end_token is not None and token == end_token:
            break
    return produced


# pylint: disable=too-many-arguments
def greedy_decode(
    model, vision, query, hooks=None, max_new=1, use_cache=True, end_token=EOS
):
    """Return the greedy continuation of a vision + query context."""
    state = DecodeState(vision, query)
    return decode(model, state, hooks, max_new, use_cache, end_token)
