"""Deep Extended Feedback codes: learned error correction over AWGN channels with feedback."""

from .channel import Channel
from .codec import DefCodec, calibrate, init_codec
from .config import ChannelParams, CodeConfig, RunConfig, TrainConfig, load_config, parse_config_text
from .errors import (
    ConfigurationError,
    DefCodeError,
    InputError,
    ModelFileError,
    NonFiniteGradientError,
    UsageError,
)
from .evaluation import BlerReport, ber_by_position, code_rate, run_lls, spectral_efficiency
from .modulation import hard_decision, modulate
from .persistence import ModelFile, load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "BlerReport", "Channel", "ChannelParams", "CodeConfig", "ConfigurationError", "DefCodec",
    "DefCodeError", "InputError", "ModelFile", "ModelFileError", "NonFiniteGradientError",
    "RunConfig", "TrainConfig", "UsageError", "ber_by_position", "calibrate", "code_rate",
    "hard_decision", "init_codec", "load_config", "load_model", "modulate", "parse_config_text",
    "run_lls", "save_model", "spectral_efficiency",
]
