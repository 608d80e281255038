"""Denoising text-to-speech: a non-autoregressive acoustic model conditioned on
frame-level noise features, trained on partly noisy multi-speaker data and synthesized
with a silence condition to produce clean speech."""

from .config import RunConfig, desk_preset, load_config
from .errors import (AlignmentMismatchError, CheckpointError, ConfigError, DataError,
                     InvalidInputError, NoiseTTSError)
from .model import NoiseConditionedTTS

__version__ = "0.1.0"

__all__ = ["RunConfig", "desk_preset", "load_config", "NoiseConditionedTTS", "NoiseTTSError",
           "ConfigError", "DataError", "AlignmentMismatchError", "InvalidInputError",
           "CheckpointError", "__version__"]
