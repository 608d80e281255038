import numpy as np
import pytest
import torch

from noise_tts.audio import measured_snr, read_wav
from noise_tts.config import CorpusConfig, FrontendConfig
from noise_tts.corpus import (CorpusManifest, Utterance, build_artificial_corpus, check_disjoint,
                              encode_chars, generate_toy_corpus, load_durations, make_batch,
                              manifest_checksum, prepare_corpus)
from noise_tts.errors import AlignmentMismatchError, ConfigError, DataError


def test_toy_corpus_entries(tmp_path, fe):
    m = generate_toy_corpus(CorpusConfig(n_speakers=2, n_utterances=8), fe, tmp_path, seed=1)
    assert len(m.entries) == 8
    for e in m.entries:
        w = read_wav(tmp_path / e["audio"])
        frames = len(w) // fe.hop_length + 1
        assert sum(e["durations"]) == frames
        assert len(e["phonemes"]) == len(e["durations"])


def test_toy_corpus_regeneration_is_bit_identical(tmp_path, fe):
    cfg = CorpusConfig(n_speakers=2, n_utterances=3)
    a = generate_toy_corpus(cfg, fe, tmp_path / "a", seed=4)
    b = generate_toy_corpus(cfg, fe, tmp_path / "b", seed=4)
    for ea, eb in zip(a.entries, b.entries):
        assert (tmp_path / "a" / ea["audio"]).read_bytes() == (tmp_path / "b" / eb["audio"]).read_bytes()


def test_minimal_split_rules(tmp_path, fe):
    # half the speakers become noisy; paired and unpaired use disjoint speakers and noise
    cfg = CorpusConfig(n_speakers=4, n_utterances=8, n_noise_files=2)
    clean = generate_toy_corpus(cfg, fe, tmp_path, seed=0)
    m = build_artificial_corpus(clean, clean.header["noise_bank"], cfg, seed=0)
    assert len(m.header["noisy_speakers"]) == 2
    assert len(m.speakers_of("paired_noisy")) == 1
    assert len(m.speakers_of("unpaired_noisy")) == 1
    assert len(m.noise_sources_of("paired_noisy")) == 1
    assert len(m.noise_sources_of("unpaired_noisy")) == 1
    assert m.noise_sources_of("paired_noisy") != m.noise_sources_of("unpaired_noisy")
    noisy = set(m.header["noisy_speakers"])
    for e in m.entries:
        assert (e["condition_class"] != "clean") == (e["speaker"] in noisy)


def test_disjointness_unsatisfiable(tmp_path, fe):
    cfg = CorpusConfig(n_speakers=2, n_utterances=4, n_noise_files=2)
    clean = generate_toy_corpus(cfg, fe, tmp_path, seed=0)
    with pytest.raises(ConfigError):
        build_artificial_corpus(clean, clean.header["noise_bank"], cfg, seed=0)


def test_check_disjoint_detects_shared_speaker():
    m = CorpusManifest({}, [
        {"speaker": "a", "condition_class": "paired_noisy", "noise_source": "n1", "split": "train"},
        {"speaker": "a", "condition_class": "unpaired_noisy", "noise_source": "n2", "split": "train"},
    ])
    with pytest.raises(DataError):
        check_disjoint(m)


def test_collapsed_snr_range_measures_exactly(tmp_path, fe):
    cfg = CorpusConfig(n_speakers=4, n_utterances=8, snr_min=10, snr_max=10)
    m = prepare_corpus(cfg, fe, tmp_path / "c", seed=2)
    noisy = [e for e in m.entries if e["condition_class"] != "clean"]
    assert noisy
    for e in noisy:
        assert e["snr_db"] == 10
        assert abs(e["snr_measured"] - 10) <= 0.01
        if e["condition_class"] == "paired_noisy":
            # the stored files are PCM-quantized; the clean part is the difference
            noisy_w = read_wav(m.path(e["audio"])).samples
            noise_w = read_wav(m.path(e["noise_audio"])).samples
            assert abs(measured_snr(noisy_w - noise_w, noise_w) - 10) < 0.1


def test_prepare_is_deterministic(tmp_path, fe):
    cfg = CorpusConfig()
    prepare_corpus(cfg, fe, tmp_path / "a", seed=9)
    prepare_corpus(cfg, fe, tmp_path / "b", seed=9)
    assert manifest_checksum(tmp_path / "a") == manifest_checksum(tmp_path / "b")
    prepare_corpus(cfg, fe, tmp_path / "c", seed=10)
    assert manifest_checksum(tmp_path / "a") != manifest_checksum(tmp_path / "c")


def test_snr_within_configured_range(toy_corpus):
    lo, hi = toy_corpus.header["snr_range"]
    snrs = [e["snr_db"] for e in toy_corpus.entries if "snr_db" in e]
    assert snrs and all(lo <= s <= hi for s in snrs)


def test_manifest_round_trip(toy_corpus):
    loaded = CorpusManifest.load(toy_corpus.root / "manifest.jsonl")
    assert loaded.entries == toy_corpus.entries
    assert loaded.header == toy_corpus.header


def test_manifest_missing_file(tmp_path, fe):
    m = prepare_corpus(CorpusConfig(), fe, tmp_path / "c", seed=0)
    m.path(m.entries[0]["features"]).unlink()
    with pytest.raises(DataError):
        CorpusManifest.load(tmp_path / "c")


# -- durations ----------------------------------------------------------------

def test_load_durations_two_spans(fe):
    # 4410 samples -> 17 frames; 0.1 s is 8.018 frames, so bounds round to 0, 8, 16
    # and the one-frame residual goes to the last phoneme
    frames = 4410 // fe.hop_length + 1
    assert frames == 17
    d = load_durations([("a", 0.0, 0.1), ("b", 0.1, 0.2)], frames, fe)
    assert d == [8, 9]
    assert sum(d) == frames


def test_load_durations_single_phoneme(fe):
    assert load_durations([("a", 0.0, 0.5)], 41, fe) == [41]


def test_load_durations_errors(fe, tmp_path):
    with pytest.raises(AlignmentMismatchError):
        load_durations([], 10, fe)
    with pytest.raises(AlignmentMismatchError):
        load_durations([("a", 0.0, 1.0)], 10, fe)
    p = tmp_path / "a.tsv"
    p.write_text("a\t0.0\t0.1\nb\t0.1\t0.2\n")
    assert load_durations(p, 17, fe) == [8, 9]


def test_scan_user_corpus(tmp_path, fe):
    toy = generate_toy_corpus(CorpusConfig(n_speakers=4, n_utterances=4), fe, tmp_path / "toy", 0)
    clean_dir = tmp_path / "user"
    for e in toy.entries:
        spk_dir = clean_dir / e["speaker"]
        spk_dir.mkdir(parents=True, exist_ok=True)
        (spk_dir / "u.wav").write_bytes(toy.path(e["audio"]).read_bytes())
        t, rows = 0, []
        for p, d in zip(e["phonemes"], e["durations"]):
            rows.append(f"{p}\t{t * fe.hop_length / fe.sample_rate}\t"
                        f"{(t + d) * fe.hop_length / fe.sample_rate}")
            t += d
        (spk_dir / "u.tsv").write_text("\n".join(rows) + "\n")
        (spk_dir / "u.txt").write_text(e["transcript"])
    cfg = CorpusConfig(toy=False, clean_dir=str(clean_dir), noise_dir=str(tmp_path / "toy" / "noise_bank"))
    m = prepare_corpus(cfg, fe, tmp_path / "prepared", seed=0)
    assert len(m.entries) == 4
    for u, e in zip(sorted(toy.entries, key=lambda e: e["speaker"]), m.entries):
        z = np.load(m.path(e["features"]))
        assert z["durations"].tolist() == u["durations"]


# -- utterances and batching -----------------------------------------------------

def _utt(frames, cls="clean", fe=FrontendConfig()):
    d = np.array([frames - frames // 2, frames // 2], dtype=np.int64)
    mel = np.random.default_rng(frames).normal(size=(frames, 80)).astype(np.float32)
    return Utterance(f"u{frames}", "s", 0, cls, np.array([1, 2]), d,
                     np.array(encode_chars("ab")), mel, np.zeros(frames, np.float32),
                     mel.copy() if cls == "paired_noisy" else None)


def test_make_batch_shapes():
    b = make_batch([_utt(3), _utt(5)], -11.5)
    assert b.mel.shape == (2, 5, 80)
    assert b.mel_mask.sum(1).tolist() == [3, 5]
    assert torch.all(b.mel[0, 3:] == -11.5)
    single = make_batch([_utt(4)], -11.5)
    assert single.mel_mask.all()
    assert make_batch([_utt(4)], -11.5, pad_to=8).mel.shape[1] == 8


def test_utterance_invariants():
    with pytest.raises(DataError):
        Utterance("x", "s", 0, "clean", np.array([1]), np.array([3]), np.array([1]),
                  np.zeros((4, 80)), np.zeros(4))
    with pytest.raises(DataError):
        Utterance("x", "s", 0, "paired_noisy", np.array([1]), np.array([4]), np.array([1]),
                  np.zeros((4, 80)), np.zeros(4), None)


def test_encode_chars():
    # blank is 0, so letters start at 1; space and apostrophe follow z
    assert encode_chars("ab z") == [1, 2, 27, 26]
    assert encode_chars("A'") == [1, 28]
    assert encode_chars("a!b") == [1, 2]
