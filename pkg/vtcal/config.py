# -*- coding: utf-8 -*-

"""
Run configuration and its plain-text file format.

A run is described by four sections, each backed by a keyword-default class:

    [decoder]      DecoderConfig: toy decoder shape and prior-bias strength
    [calibration]  CalibConfig: intervention layer, strengths, probe settings
    [task]         TaskSpec: synthetic yes/no task generation
    [run]          mode, seed and file locations

Files are read and written with configparser. Floats are written with repr,
so saving and loading a configuration gives back an equal object. The config
fingerprint is the SHA-256 of the canonical JSON of every section except the
file locations.
"""

import configparser
import hashlib
import json
import logging
import math
from enum import Enum

from vtcal.common import BaseClass, ConfigError, PersistenceError
from vtcal.decoder import DecoderConfig
from vtcal.htables import (
    BLUR_RADIUS,
    CALIBRATION_LAYER,
    CONTRAST_WEIGHT,
    CRC_STRENGTH,
    FLIP_PROB,
    NOISE_INTENSITY,
    NUM_KEPT_TOKENS,
    NUM_NEGATIVES,
    OBJECTS_PER_SCENE,
    OBJECT_STYLES,
    SALT_RATIO,
    SOURCE_VISION_TOKENS,
    SVC_STRENGTH,
    Mode,
    Split,
)

_LOGGER = logging.getLogger(__name__)

SVC_PLACEMENTS = ("post", "pre")
SVC_BANKS = ("synergy", "original")
DELTA_POSITIONS = ("last", "query-mean")
NEGATIVE_SOURCES = ("pruned", "masked")


def scaled_num_kept(num_vision, kept=NUM_KEPT_TOKENS, source=SOURCE_VISION_TOKENS):
    """Scale the kept-token count to another vision-token budget.

    >>> scaled_num_kept(576)
    5
    >>> scaled_num_kept(36)
    1
    """
    return max(1, int(math.ceil(kept * num_vision / float(source))))


class CalibConfig(BaseClass):
    """Hyperparameters of the two calibration modules."""

    # pylint: disable=too-many-arguments,too-many-locals
    def __init__(
        self,
        layer=CALIBRATION_LAYER,
        svc_strength=SVC_STRENGTH,
        crc_strength=CRC_STRENGTH,
        num_negatives=NUM_NEGATIVES,
        num_kept=NUM_KEPT_TOKENS,
        svc_placement="post",
        svc_bank="synergy",
        svc_first_step=True,
        crc_first_step=False,
        crc_sign=1,
        delta_position="last",
        negative_source="pruned",
        flip_prob=FLIP_PROB,
        blur_radius=BLUR_RADIUS,
        noise_intensity=NOISE_INTENSITY,
        salt_ratio=SALT_RATIO,
        contrast_weight=CONTRAST_WEIGHT,
        workers=1,
    ):
        """Initialize and validate the calibration settings."""
        self.layer = int(layer)
        self.svc_strength = float(svc_strength)
        self.crc_strength = float(crc_strength)
        self.num_negatives = int(num_negatives)
        self.num_kept = int(num_kept)
        self.svc_placement = svc_placement
        self.svc_bank = svc_bank
        self.svc_first_step = bool(svc_first_step)
        self.crc_first_step = bool(crc_first_step)
        self.crc_sign = int(crc_sign)
        self.delta_position = delta_position
        self.negative_source = negative_source
        self.flip_prob = float(flip_prob)
        self.blur_radius = float(blur_radius)
        self.noise_intensity = float(noise_intensity)
        self.salt_ratio = float(salt_ratio)
        self.contrast_weight = float(contrast_weight)
        self.workers = int(workers)
        self._validate()

    def _validate(self):
        _check_range("svc_strength", self.svc_strength, 0.0, 1.0)
        _check_range("flip_prob", self.flip_prob, 0.0, 1.0)
        _check_range("noise_intensity", self.noise_intensity, 0.0, 1.0)
        _check_range("salt_ratio", self.salt_ratio, 0.0, 1.0)
        if self.crc_strength < 0:
            raise ConfigError(
                "crc_strength must be >= 0, got {}".format(self.crc_strength)
            )
        if self.layer < 1:
            raise ConfigError("layer must be >= 1, got {}".format(self.layer))
        if self.num_negatives < 1:
            raise ConfigError(
                "num_negatives must be >= 1, got {}".format(self.num_negatives)
            )
        if self.num_kept < 1:
            raise ConfigError("num_kept must be >= 1, got {}".format(self.num_kept))
        if self.workers < 1:
            raise ConfigError("workers must be >= 1, got {}".format(self.workers))
        if self.crc_sign not in (1, -1):
            raise ConfigError("crc_sign must be 1 or -1, got {}".format(self.crc_sign))
        if self.blur_radius < 0:
            raise ConfigError("blur_radius must be >= 0")
        for name, choices in (
            ("svc_placement", SVC_PLACEMENTS),
            ("svc_bank", SVC_BANKS),
            ("delta_position", DELTA_POSITIONS),
            ("negative_source", NEGATIVE_SOURCES),
        ):
            if getattr(self, name) not in choices:
                raise ConfigError(
                    "{} must be one of {}, got {!r}".format(
                        name, ", ".join(choices), getattr(self, name)
                    )
                )
        if self.svc_placement == "pre" and self.layer < 2:
            raise ConfigError("pre-layer injection needs layer >= 2")

    def __repr__(self):
        """Return a representation of CalibConfig for programmatic use."""
        return "CalibConfig({})".format(_kwargs_repr(self))

    def check_model(self, num_layers):
        """Raise ConfigError if the layer does not exist in the model."""
        if self.layer > num_layers:
            raise ConfigError(
                "calibration layer {} exceeds model depth {}".format(
                    self.layer, num_layers
                )
            )

    def check_vision(self, num_vision):
        """Raise ConfigError unless 1 <= num_kept < N_v."""
        if not 1 <= self.num_kept < num_vision:
            raise ConfigError(
                "num_kept must be in 1..{}, got {}".format(
                    num_vision - 1, self.num_kept
                )
            )

    def replace(self, **changes):
        """Return a copy with some fields changed."""
        return CalibConfig(**dict(self.__dict__, **changes))


class TaskSpec(BaseClass):
    """Size and seed of a synthetic yes/no object-presence task."""

    # pylint: disable=too-many-arguments
    def __init__(
        self,
        num_scenes=20,
        questions_per_scene=4,
        objects_per_scene=OBJECTS_PER_SCENE,
        vocab_size=len(OBJECT_STYLES),
        seed=0,
    ):
        """Initialize and validate the task specification."""
        self.num_scenes = int(num_scenes)
        self.questions_per_scene = int(questions_per_scene)
        self.objects_per_scene = int(objects_per_scene)
        self.vocab_size = int(vocab_size)
        self.seed = int(seed)
        if self.num_scenes < 1:
            raise ConfigError("num_scenes must be >= 1, got {}".format(self.num_scenes))
        if self.questions_per_scene < 2 or self.questions_per_scene % 2:
            raise ConfigError(
                "questions_per_scene must be a positive even number, got {}".format(
                    self.questions_per_scene
                )
            )
        if self.vocab_size > len(OBJECT_STYLES):
            raise ConfigError(
                "vocab_size is limited to {}, got {}".format(
                    len(OBJECT_STYLES), self.vocab_size
                )
            )

    def __repr__(self):
        """Return a representation of TaskSpec for programmatic use."""
        return "TaskSpec({})".format(_kwargs_repr(self))


class RunConfig(BaseClass):
    """Everything one experiment run needs."""

    # pylint: disable=too-many-arguments
    def __init__(
        self,
        decoder=None,
        calib=None,
        task=None,
        mode=Mode.VANILLA,
        seed=0,
        encoder_seed=0,
        splits=tuple(split.value for split in Split),
        task_path="task.json",
        output_dir="results",
    ):
        """Initialize the run configuration."""
        self.decoder = decoder if decoder is not None else DecoderConfig()
        self.calib = calib if calib is not None else CalibConfig()
        self.task = task if task is not None else TaskSpec()
        try:
            self.mode = Mode(mode)
            self.splits = tuple(Split(split).value for split in _as_list(splits))
        except ValueError as err:
            raise ConfigError(str(err))
        self.seed = int(seed)
        self.encoder_seed = int(encoder_seed)
        self.task_path = str(task_path)
        self.output_dir = str(output_dir)
        self.calib.check_model(self.decoder.num_layers)

    def __repr__(self):
        """Return a representation of RunConfig for programmatic use."""
        return (
            "RunConfig(decoder={!r}, calib={!r}, task={!r}, mode={}, seed={}, "
            "encoder_seed={}, splits={!r}, task_path={!r}, output_dir={!r})".format(
                self.decoder,
                self.calib,
                self.task,
                self.mode,
                self.seed,
                self.encoder_seed,
                self.splits,
                self.task_path,
                self.output_dir,
            )
        )

    def replace(self, **changes):
        """Return a copy with some top-level fields changed."""
        return RunConfig(**dict(self.__dict__, **changes))

    def as_dict(self):
        """Return a JSON-ready nested dictionary of every field."""
        return {
            "decoder": _section(self.decoder),
            "calibration": _section(self.calib),
            "task": _section(self.task),
            "run": _section(self, _RUN_FIELDS),
        }

    @property
    def fingerprint(self):
        """Return the SHA-256 hex digest of the canonical configuration."""
        data = self.as_dict()
        for key in _LOCATION_FIELDS:
            del data["run"][key]
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def save(self, path):
        """Write the configuration as an INI file."""
        parser = configparser.ConfigParser()
        for name, values in self.as_dict().items():
            parser[name] = {key: _format_value(value) for key, value in values.items()}
        try:
            with open(path, "w") as handle:
                parser.write(handle)
        except OSError as err:
            raise PersistenceError("cannot write config to {}: {}".format(path, err))

    @classmethod
    def load(cls, path):
        """Read a configuration written by save; missing keys take defaults."""
        parser = configparser.ConfigParser()
        try:
            with open(path) as handle:
                parser.read_file(handle)
        except OSError as err:
            raise PersistenceError("cannot read config from {}: {}".format(path, err))
        except configparser.Error as err:
            raise ConfigError("malformed config {}: {}".format(path, err))
        unknown = set(parser.sections()) - {"decoder", "calibration", "task", "run"}
        if unknown:
            raise ConfigError("unknown config sections: {}".format(sorted(unknown)))
        decoder = DecoderConfig(**_parse(parser, "decoder", DecoderConfig()))
        calib = CalibConfig(**_parse(parser, "calibration", CalibConfig()))
        task = TaskSpec(**_parse(parser, "task", TaskSpec()))
        run = _parse(parser, "run", RunConfig(decoder, calib, task), _RUN_FIELDS)
        _LOGGER.debug("Loaded config %s", path)
        return cls(decoder, calib, task, **run)


_RUN_FIELDS = ("mode", "seed", "encoder_seed", "splits", "task_path", "output_dir")
_LOCATION_FIELDS = ("task_path", "output_dir")


def _check_range(name, value, low, high):
    if not low <= value <= high:
        raise ConfigError(
            "{} must be in [{}, {}], got {}".format(name, low, high, value)
        )


def _as_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return list(value)


def _kwargs_repr(obj):
    return ", ".join(
        "{}={!r}".format(key, value) for key, value in sorted(obj.__dict__.items())
    )


def _plain(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, tuple):
        return list(value)
    return value


def _section(obj, fields=None):
    names = fields if fields is not None else sorted(obj.__dict__)
    return {name: _plain(getattr(obj, name)) for name in names}


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ", ".join(str(item) for item in value)
    return str(value)


def _parse(parser, section, defaults, fields=None):
    """Return keyword arguments for a section, typed like the defaults."""
    if not parser.has_section(section):
        return {}
    known = fields if fields is not None else sorted(defaults.__dict__)
    values = {}
    for key in parser[section]:
        if key not in known:
            raise ConfigError("unknown key {!r} in section [{}]".format(key, section))
        default = getattr(defaults, key)
        try:
            if isinstance(default, bool):
                values[key] = parser.getboolean(section, key)
            elif isinstance(default, int):
                values[key] = parser.getint(section, key)
            elif isinstance(default, float):
                values[key] = parser.getfloat(section, key)
            elif isinstance(default, tuple):
                values[key] = tuple(_as_list(parser.get(section, key)))
            else:
                values[key] = parser.get(section, key)
        except ValueError as err:
            raise ConfigError("[{}] {}: {}".format(section, key, err))
    return values
