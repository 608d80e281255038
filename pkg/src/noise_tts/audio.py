"""Waveform I/O, log-mel features, F0 tracking and SNR-controlled mixing.

Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass
from pathlib import Path

import librosa
import numpy as np
from scipy.io import wavfile

from .config import FrontendConfig
from .errors import ConfigError, InvalidInputError


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 22050

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise InvalidInputError("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise InvalidInputError("sample_rate must be positive")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def read_wav(path: str | Path) -> Waveform:
    rate, data = wavfile.read(str(path))
    if data.ndim > 1:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        data = data / 32768.0
    elif data.dtype == np.int32:
        data = data / 2147483648.0
    return Waveform(data.astype(np.float64), int(rate))


def write_wav(path: str | Path, wave: Waveform) -> None:
    """Write mono 16-bit PCM."""
    pcm = np.clip(np.round(wave.samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), wave.sample_rate, pcm)


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Round-trip samples through 16-bit PCM so in-memory audio matches what is on disk."""
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767)
    return pcm.astype(np.int16) / 32768.0


def n_frames(n_samples: int, hop_length: int) -> int:
    return n_samples // hop_length + 1


@functools.lru_cache(maxsize=8)
def _mel_basis(sample_rate, n_fft, n_mels, fmin, fmax) -> np.ndarray:
    return librosa.filters.mel(sr=sample_rate, n_fft=n_fft, n_mels=n_mels, fmin=fmin, fmax=fmax)


def mel_basis(cfg: FrontendConfig) -> np.ndarray:
    """(n_mels, n_fft // 2 + 1) Slaney-normalized filterbank."""
    return _mel_basis(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax)


def mel_center_frequencies(cfg: FrontendConfig) -> np.ndarray:
    return librosa.mel_frequencies(n_mels=cfg.n_mels + 2, fmin=cfg.fmin, fmax=cfg.fmax)[1:-1]


def _check_rate(w: Waveform, cfg: FrontendConfig) -> None:
    if w.sample_rate != cfg.sample_rate:
        raise ConfigError(f"sample rate {w.sample_rate} does not match config {cfg.sample_rate}")


def stft_magnitude(samples: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    with warnings.catch_warnings():
        # librosa warns when n_fft exceeds very short inputs; reflect padding still applies.
        warnings.simplefilter("ignore", UserWarning)
        spec = librosa.stft(samples, n_fft=cfg.n_fft, hop_length=cfg.hop_length,
                            win_length=cfg.win_length, window="hann", center=True,
                            pad_mode="reflect")
    return np.abs(spec)


def mel_spectrogram(w: Waveform, cfg: FrontendConfig) -> np.ndarray:
    """Log-amplitude mel spectrogram of shape (frames, n_mels).

    Frames are centered with reflect padding, so ``frames == len(w) // hop + 1``.
    Amplitudes are clamped at ``cfg.amp_floor`` before the natural log.
    """
    _check_rate(w, cfg)
    mag = stft_magnitude(w.samples, cfg)
    mel = mel_basis(cfg) @ mag
    return np.log(np.maximum(mel, cfg.amp_floor)).T.copy()


def silence_mel(frames: int, cfg: FrontendConfig) -> np.ndarray:
    if frames < 1:
        raise InvalidInputError("silence_mel needs at least one frame")
    return np.full((frames, cfg.n_mels), cfg.log_floor)


def normalize_mel(mel, cfg: FrontendConfig):
    """Map log-mel values onto [0, 1] using the floor/ceiling pair (works on arrays and tensors)."""
    return (mel - cfg.log_floor) / (cfg.log_ceiling - cfg.log_floor)


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def fit_noise(noise: np.ndarray, length: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Tile (from a random offset) or trim ``noise`` to exactly ``length`` samples."""
    offset = int(rng.integers(0, noise.size)) if rng is not None else 0
    reps = -(-(offset + length) // noise.size)
    return np.tile(noise, reps)[offset:offset + length]


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float,
               rng: np.random.Generator | None = None) -> tuple[Waveform, Waveform]:
    """Mix ``noise`` into ``clean`` so that the power ratio equals ``snr_db``.

    Returns ``(noisy, scaled_noise)``; the scaled noise is the paired extraction target.
    """
    if clean.sample_rate != noise.sample_rate:
        raise InvalidInputError("clean and noise sample rates differ")
    n = fit_noise(noise.samples, len(clean), rng)
    p_clean, p_noise = rms(clean.samples), rms(n)
    if p_clean == 0.0 or p_noise == 0.0:
        raise InvalidInputError("mix_at_snr needs non-zero power in both signals")
    gain = p_clean / (p_noise * 10.0 ** (snr_db / 20.0))
    scaled = gain * n
    return (Waveform(clean.samples + scaled, clean.sample_rate),
            Waveform(scaled, clean.sample_rate))


def measured_snr(clean: np.ndarray, noise: np.ndarray) -> float:
    return float(10.0 * np.log10(np.mean(np.square(clean)) / np.mean(np.square(noise))))


def extract_f0(w: Waveform, cfg: FrontendConfig) -> np.ndarray:
    """Per-frame F0 in Hz (0 for unvoiced) by normalized autocorrelation.

    Frames share the mel framing (centered, one per hop). The analysis window spans two
    periods of ``f0_min``. Past the zero-lag lobe, the first lag whose normalized correlation
    reaches 90% of the maximum is taken as the period (suppresses octave-down errors) and refined by
    parabolic interpolation. A frame is voiced when that peak exceeds
    ``cfg.voicing_threshold`` and the frame is not silent.
    """
    _check_rate(w, cfg)
    sr = cfg.sample_rate
    frames = n_frames(len(w), cfg.hop_length)
    lag_min = max(2, int(np.floor(sr / cfg.f0_max)))
    lag_max = int(np.ceil(sr / cfg.f0_min))
    win = 2 * lag_max
    x = np.pad(w.samples, (win // 2, win // 2))
    idx = np.arange(frames)[:, None] * cfg.hop_length + np.arange(win)[None, :]
    seg = x[idx]
    seg = seg - seg.mean(axis=1, keepdims=True)

    nfft = 1 << int(np.ceil(np.log2(2 * win)))
    spec = np.fft.rfft(seg, nfft, axis=1)
    acf = np.fft.irfft(spec * np.conj(spec), nfft, axis=1)[:, :lag_max + 2]
    sq = np.square(seg)
    csum = np.concatenate([np.zeros((frames, 1)), np.cumsum(sq, axis=1)], axis=1)
    lags = np.arange(lag_max + 2)
    head = csum[:, win - lags]          # sum x[n]^2 for n < win - lag
    tail = csum[:, -1:] - csum[:, lags]  # sum x[n]^2 for n >= lag
    denom = np.sqrt(np.maximum(head * tail, 1e-20))
    r = acf / denom

    f0 = np.zeros(frames)
    energy = csum[:, -1] / win
    for t in range(frames):
        if energy[t] < 1e-8:
            continue
        band = r[t, lag_min:lag_max + 1]
        peak = band.max()
        if peak < cfg.voicing_threshold:
            continue
        # skip the zero-lag lobe: start after the first local minimum
        rising = np.flatnonzero(np.diff(band) > 0)
        if rising.size == 0:
            continue
        start = int(rising[0])
        peak = band[start:].max()
        if peak < cfg.voicing_threshold:
            continue
        # first local maximum reaching 90% of the best peak
        cand = np.flatnonzero(band[start:] >= 0.9 * peak)
        k = start + int(cand[0])
        while k + 1 < band.size and band[k + 1] >= band[k]:
            k += 1
        lag = float(lag_min + k)
        li = lag_min + k
        if 1 <= li < lag_max + 1:
            a, b, c = r[t, li - 1], r[t, li], r[t, li + 1]
            den = a - 2 * b + c
            if den < 0:
                lag += 0.5 * (a - c) / den
        hz = sr / lag
        if cfg.f0_min <= hz <= cfg.f0_max:
            f0[t] = hz
    return f0
