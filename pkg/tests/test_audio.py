import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noise_tts.audio import (Waveform, extract_f0, fit_noise, measured_snr, mel_center_frequencies,
                             mel_spectrogram, mix_at_snr, n_frames, read_wav, rms, silence_mel,
                             write_wav)
from noise_tts.errors import InvalidInputError

SR = 22050


def test_frame_count_formula(fe):
    mel = mel_spectrogram(Waveform(np.zeros(22050), SR), fe)
    assert mel.shape == (22050 // 275 + 1, 80) == (81, 80)


@pytest.mark.parametrize("n", [1, 274, 275, 276, 5000])
def test_frame_count_matches_helper(fe, n):
    assert mel_spectrogram(Waveform(np.zeros(n), SR), fe).shape[0] == n_frames(n, 275)


def test_silence_is_floor(fe):
    mel = mel_spectrogram(Waveform(np.zeros(4000), SR), fe)
    assert np.all(mel == math.log(1e-5))
    assert fe.log_floor == pytest.approx(-11.5129, abs=1e-4)


def test_silence_mel_definition(fe):
    assert silence_mel(10, fe).shape == (10, 80)
    assert silence_mel(1, fe).shape == (1, 80)
    assert np.all(silence_mel(10, fe) == math.log(1e-5))
    with pytest.raises(InvalidInputError):
        silence_mel(0, fe)


def test_silence_mel_matches_zero_waveform(fe):
    mel = mel_spectrogram(Waveform(np.zeros(3000), SR), fe)
    assert np.array_equal(silence_mel(mel.shape[0], fe), mel)


def test_sine_argmax_is_nearest_center(fe):
    # cosine phase keeps the reflect-padded edge frames free of a phase discontinuity
    t = np.arange(SR) / SR
    mel = mel_spectrogram(Waveform(0.5 * np.cos(2 * np.pi * 440 * t), SR), fe)
    centers = mel_center_frequencies(fe)
    nearest = int(np.argmin(np.abs(centers - 440)))
    assert np.all(mel.argmax(axis=1) == nearest)


def test_mix_gain_trivial_cases():
    rng = np.random.default_rng(0)
    c = rng.normal(size=1000)
    n = rng.normal(size=1000)
    n *= rms(c) / rms(n)
    _, scaled = mix_at_snr(Waveform(c, SR), Waveform(n, SR), 0.0)
    assert np.allclose(scaled.samples, n)
    _, scaled = mix_at_snr(Waveform(c, SR), Waveform(n, SR), 20.0)
    assert np.allclose(scaled.samples, 0.1 * n)


@given(st.integers(0, 2 ** 31), st.floats(5, 25))
@settings(max_examples=100, deadline=None)
def test_mix_measured_snr(seed, snr):
    rng = np.random.default_rng(seed)
    clean = Waveform(rng.normal(size=int(rng.integers(200, 3000))) * rng.uniform(0.01, 1), SR)
    noise = Waveform(rng.normal(size=int(rng.integers(50, 4000))), SR)
    noisy, scaled = mix_at_snr(clean, noise, snr, rng)
    assert len(noisy) == len(clean) == len(scaled)
    assert abs(measured_snr(clean.samples, scaled.samples) - snr) <= 0.01
    assert np.allclose(noisy.samples - scaled.samples, clean.samples)


def test_mix_rejects_silent_input():
    with pytest.raises(InvalidInputError):
        mix_at_snr(Waveform(np.zeros(10), SR), Waveform(np.ones(10), SR), 10)


def test_fit_noise_tiles_and_trims():
    x = np.arange(5.0)
    assert np.array_equal(fit_noise(x, 12), np.tile(x, 3)[:12])
    assert fit_noise(x, 3, np.random.default_rng(1)).size == 3


@pytest.mark.parametrize("freq", [220.0, 110.0, 440.0])
def test_f0_of_sine(fe, freq):
    t = np.arange(SR) / SR
    f0 = extract_f0(Waveform(0.5 * np.sin(2 * np.pi * freq * t), SR), fe)
    voiced = f0[f0 > 0]
    assert voiced.size >= 0.9 * f0.size
    assert np.all(np.abs(voiced - freq) <= 3.0)


def test_f0_silence_unvoiced(fe):
    assert np.all(extract_f0(Waveform(np.zeros(5000), SR), fe) == 0)


def test_f0_white_noise_mostly_unvoiced(fe):
    rng = np.random.default_rng(0)
    f0 = extract_f0(Waveform(rng.normal(size=SR) * 0.3, SR), fe)
    assert np.mean(f0 == 0) >= 0.9


def test_f0_length_matches_mel(fe):
    w = Waveform(np.random.default_rng(1).normal(size=3001), SR)
    assert extract_f0(w, fe).shape[0] == mel_spectrogram(w, fe).shape[0]


def test_wav_round_trip(tmp_path):
    x = np.sin(np.linspace(0, 30, 999)) * 0.8
    write_wav(tmp_path / "a.wav", Waveform(x, SR))
    y = read_wav(tmp_path / "a.wav")
    assert y.sample_rate == SR
    assert np.max(np.abs(y.samples - x)) < 1e-4


def test_waveform_validation():
    with pytest.raises(InvalidInputError):
        Waveform(np.array([]), SR)
    with pytest.raises(InvalidInputError):
        Waveform(np.array([np.nan]), SR)
