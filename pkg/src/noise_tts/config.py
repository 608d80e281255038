"""Run configuration: dataclasses, YAML (de)serialization and validation."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

CONFIG_VERSION = 1
GRANULARITIES = ("frame", "utterance", "none")


@dataclass
class FrontendConfig:
    # 50 ms / 12.5 ms at 22050 Hz is 1102.5 / 275.625 samples; rounded to an exact 4:1 pair.
    sample_rate: int = 22050
    win_length: int = 1100
    hop_length: int = 275
    n_fft: int = 2048
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    amp_floor: float = 1e-5
    # Upper bound of the log-mel range used to map features into [0, 1].
    log_ceiling: float = 3.0
    f0_min: float = 50.0
    f0_max: float = 800.0
    voicing_threshold: float = 0.6

    @property
    def log_floor(self) -> float:
        return math.log(self.amp_floor)

    def validate(self) -> None:
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if self.hop_length <= 0 or self.win_length < self.hop_length:
            raise ConfigError("need 0 < hop_length <= win_length")
        if self.n_fft < self.win_length:
            raise ConfigError("n_fft must be >= win_length")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ConfigError("need 0 <= fmin < fmax <= sample_rate / 2")
        if self.amp_floor <= 0 or self.log_ceiling <= self.log_floor:
            raise ConfigError("amp_floor must be positive and below exp(log_ceiling)")
        if not 0 < self.f0_min < self.f0_max:
            raise ConfigError("need 0 < f0_min < f0_max")


@dataclass
class CorpusConfig:
    toy: bool = True
    n_speakers: int = 4
    n_utterances: int = 8
    n_phonemes: int = 8
    min_phonemes: int = 4
    max_phonemes: int = 7
    min_duration: int = 3
    max_duration: int = 7
    n_noise_files: int = 4
    snr_min: float = 5.0
    snr_max: float = 25.0
    noisy_fraction: float = 0.5
    paired_fraction: float = 0.5
    validation_fraction: float = 0.0
    # Used when toy is false: directories holding speaker/*.wav (+ .txt/.tsv) and noise/*.wav.
    clean_dir: str | None = None
    noise_dir: str | None = None

    def validate(self) -> None:
        if self.n_speakers < 1 or self.n_utterances < 1:
            raise ConfigError("n_speakers and n_utterances must be positive")
        if not self.snr_min <= self.snr_max:
            raise ConfigError("snr_min must not exceed snr_max")
        if not 0 < self.noisy_fraction <= 1 or not 0 < self.paired_fraction < 1:
            raise ConfigError("noisy_fraction in (0, 1], paired_fraction in (0, 1)")
        if not 0 <= self.validation_fraction < 1:
            raise ConfigError("validation_fraction must be in [0, 1)")
        if not 1 <= self.min_phonemes <= self.max_phonemes:
            raise ConfigError("need 1 <= min_phonemes <= max_phonemes")
        if not 1 <= self.min_duration <= self.max_duration:
            raise ConfigError("need 1 <= min_duration <= max_duration")
        if not self.toy and (self.clean_dir is None or self.noise_dir is None):
            raise ConfigError("clean_dir and noise_dir are required when toy is false")


@dataclass
class ModelConfig:
    n_phonemes: int = 8
    n_speakers: int = 4
    n_chars: int = 29  # including the CTC blank
    d_model: int = 256
    n_heads: int = 2
    ffn_dim: int = 1024
    n_layers: int = 4
    ctc_layers: int = 2
    dropout: float = 0.1
    predictor_channels: int = 256
    predictor_kernel: int = 3
    pitch_bins: int = 256
    n_mels: int = 80
    unet_base_channels: int = 32
    unet_depth: int = 4
    granularity: str = "frame"

    def validate(self) -> None:
        for name in ("n_phonemes", "n_speakers", "n_chars", "d_model", "n_heads", "ffn_dim",
                     "n_layers", "ctc_layers", "predictor_channels", "pitch_bins", "n_mels",
                     "unet_base_channels", "unet_depth"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.n_mels % (2 ** self.unet_depth):
            raise ConfigError("n_mels must be divisible by 2**unet_depth")
        if self.granularity not in GRANULARITIES:
            raise ConfigError(f"granularity must be one of {GRANULARITIES}")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")


@dataclass
class LossWeights:
    mel: float = 1.0
    duration: float = 1.0
    pitch: float = 1.0
    extractor: float = 1.0
    adversarial: float = 1.0


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    warmup_steps: int = 400
    batch_size: int = 12
    extractor_steps: int = 1000
    joint_steps: int = 2000
    grad_clip: float = 1.0
    lambda_grl: float = 1.0
    fix_extractor: bool = False
    use_adversarial_ctc: bool = True
    checkpoint_every: int = 500
    validate_every: int = 100
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def validate(self) -> None:
        if self.lr <= 0 or self.batch_size <= 0 or self.warmup_steps < 0:
            raise ConfigError("lr and batch_size must be positive, warmup_steps non-negative")
        if self.extractor_steps < 0 or self.joint_steps < 0:
            raise ConfigError("step budgets must be non-negative")
        if self.lambda_grl < 0:
            raise ConfigError("lambda_grl must be >= 0")
        if any(w < 0 for w in dataclasses.astuple(self.loss_weights)):
            raise ConfigError("loss weights must be >= 0")
        if self.checkpoint_every <= 0 or self.validate_every <= 0:
            raise ConfigError("checkpoint_every and validate_every must be positive")


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    output_dir: str = "runs/toy"
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}")
        self.frontend.validate()
        self.corpus.validate()
        self.model.validate()
        self.train.validate()
        if self.model.n_mels != self.frontend.n_mels:
            raise ConfigError("model.n_mels must equal frontend.n_mels")


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{where}.{name}: expected a boolean")
            kwargs[name] = value
        elif isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
            kwargs[name] = float(value)
        elif default is not None and not isinstance(value, type(default)):
            raise ConfigError(f"{where}.{name}: expected {type(default).__name__}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data or {}, "config")
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data or {})


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` overrides (values parsed as YAML scalars)."""
    data = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config section in {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = yaml.safe_load(raw)
    return config_from_dict(data)


def desk_preset(**overrides: Any) -> RunConfig:
    """Full-sized backbone with a narrow UNet (base 8 channels) so the toy pipeline
    trains in minutes on a single CPU core. ``overrides`` are top-level RunConfig fields."""
    cfg = RunConfig(**overrides)
    cfg.model.unet_base_channels = 8
    cfg.validate()
    return cfg
