"""Test-time adaptation of mask-based speech enhancers by mask polarization."""

from .adapter import AdaptConfig, AdaptationSession, adapt_utterance, enhance, load_config
from .dsp import AudioClip, Spectrogram, StftConfig, apply_mask, istft, stft
from .errors import ConfigError, DataError, MPolError, NumericalError
from .loss import mpol_loss, shelf_penalty, wasserstein_1d
from .model import MaskNet, load_params, save_params
from .reference import estimate_noise_floor, reference_mask

__all__ = [
    "AdaptConfig",
    "AdaptationSession",
    "AudioClip",
    "ConfigError",
    "DataError",
    "MPolError",
    "MaskNet",
    "NumericalError",
    "Spectrogram",
    "StftConfig",
    "adapt_utterance",
    "apply_mask",
    "enhance",
    "estimate_noise_floor",
    "istft",
    "load_config",
    "load_params",
    "mpol_loss",
    "reference_mask",
    "save_params",
    "shelf_penalty",
    "stft",
    "wasserstein_1d",
]
