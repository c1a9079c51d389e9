"""
Vision-token calibration for a toy multimodal decoder.

vtcal runs yes/no object-presence questions through a small decoder and lets
two training-free interventions rewrite its hidden states: a synergy-based
visual context injection and a contrastive probe calibration built from
pruned copies of the image tokens.
"""
from vtcal.config import CalibConfig, RunConfig, TaskSpec
from vtcal.decoder import DecoderConfig, DecoderModel, build_model
from vtcal.htables import Mode, Split

__version__ = "0.1.0"

__all__ = [
    "CalibConfig",
    "DecoderConfig",
    "DecoderModel",
    "Mode",
    "RunConfig",
    "Split",
    "TaskSpec",
    "build_model",
]
