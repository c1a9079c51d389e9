"""Fixtures for py.test."""

import pytest

from vtcal.config import CalibConfig, RunConfig, TaskSpec
from vtcal.decoder import DecoderConfig, build_model
from vtcal.pipeline import make_query
from vtcal.vision import PatchEncoder, generate_scene

SMALL_DIM = 16


@pytest.fixture
def decoder_config():
    """A decoder small enough to run many questions quickly."""
    return DecoderConfig(
        num_layers=4, hidden_dim=SMALL_DIM, num_heads=2, vocab_size=64, seed=1
    )


@pytest.fixture
def model(decoder_config):
    """A seeded decoder built from the small config."""
    return build_model(decoder_config)


@pytest.fixture
def calib():
    """Calibration settings fitting the small decoder."""
    return CalibConfig(layer=2)


@pytest.fixture
def encoder():
    """A patch encoder matching the small decoder width."""
    return PatchEncoder(0, SMALL_DIM)


@pytest.fixture
def scene():
    """A three-object scene."""
    return generate_scene(3, seed=11)


@pytest.fixture
def vision(scene, encoder):
    """The vision tokens of the scene."""
    return encoder.encode(scene)


@pytest.fixture
def query(scene):
    """A question about an object in the scene."""
    return make_query(scene.object_ids[0])


@pytest.fixture
def run_config(decoder_config, calib, tmp_path):
    """A run over a two-scene task, writing under tmp_path."""
    return RunConfig(
        decoder=decoder_config,
        calib=calib,
        task=TaskSpec(num_scenes=2, questions_per_scene=2),
        task_path=str(tmp_path / "task.json"),
        output_dir=str(tmp_path / "results"),
    )


@pytest.fixture
def toy_config(tmp_path):
    """The default toy decoder, calibration and task."""
    return RunConfig(
        task_path=str(tmp_path / "toy-task.json"), output_dir=str(tmp_path / "toy")
    )
