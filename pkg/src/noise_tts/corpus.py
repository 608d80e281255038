"""Corpus construction and loading.

A corpus lives in one directory::

    manifest.jsonl       header line + one JSON record per utterance
    clean/<spk>/<id>.wav generated clean sources (toy mode)
    noise_bank/<n>.wav   background-noise sources
    audio/<id>.wav       mixed training audio for noisy speakers
    noise/<id>.wav       scaled noise actually mixed in (paired utterances only)
    features/<id>.npz    mel, pitch, durations (+ noise_mel for paired)

All paths stored in the manifest are relative to the manifest's directory.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy import signal

from . import audio
from .audio import Waveform
from .config import CorpusConfig, FrontendConfig
from .errors import AlignmentMismatchError, ConfigError, DataError, InvalidInputError
from .model import CLEAN, CONDITION_CLASSES, PAIRED, UNPAIRED

log = logging.getLogger(__name__)

MANIFEST_FORMAT = "noise-tts-manifest"
MANIFEST_VERSION = 1
BLANK = 0
CHARSET = "abcdefghijklmnopqrstuvwxyz '"


def encode_chars(text: str) -> list[int]:
    """Map text onto CTC ids (blank is 0); characters outside the set are dropped."""
    return [CHARSET.index(c) + 1 for c in text.lower() if c in CHARSET]


def n_chars() -> int:
    return len(CHARSET) + 1


# ---------------------------------------------------------------------------
# manifest

@dataclass
class CorpusManifest:
    header: dict
    entries: list[dict]
    root: Path = field(default=Path("."))

    @property
    def speakers(self) -> list[str]:
        return self.header["speakers"]

    @property
    def phoneme_symbols(self) -> list[str]:
        return self.header["phonemes"]

    @property
    def noise_bank_partition(self) -> dict:
        return self.header.get("noise_bank_partition", {})

    def select(self, split: str | None = None, condition_class: str | None = None) -> list[dict]:
        return [e for e in self.entries
                if (split is None or e["split"] == split)
                and (condition_class is None or e["condition_class"] == condition_class)]

    def speakers_of(self, condition_class: str) -> set[str]:
        return {e["speaker"] for e in self.select(condition_class=condition_class)}

    def noise_sources_of(self, condition_class: str) -> set[str]:
        return {e["noise_source"] for e in self.select(condition_class=condition_class)}

    def path(self, rel: str) -> Path:
        return self.root / rel

    def to_lines(self) -> list[str]:
        head = {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, **self.header}
        return [json.dumps(head, sort_keys=True)] + [json.dumps(e, sort_keys=True)
                                                     for e in self.entries]

    def save(self, path: str | Path | None = None) -> Path:
        path = Path(path) if path is not None else self.root / "manifest.jsonl"
        path.write_text("\n".join(self.to_lines()) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path, check_files: bool = True) -> "CorpusManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.jsonl"
        try:
            lines = path.read_text().splitlines()
        except OSError as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        if not lines:
            raise DataError(f"empty manifest {path}")
        header = json.loads(lines[0])
        if header.pop("format", None) != MANIFEST_FORMAT:
            raise DataError(f"{path} is not a {MANIFEST_FORMAT} file")
        if header.pop("version", None) != MANIFEST_VERSION:
            raise DataError(f"unsupported manifest version in {path}")
        manifest = cls(header, [json.loads(line) for line in lines[1:] if line.strip()],
                       path.parent)
        if check_files:
            manifest.check_files()
        return manifest

    def check_files(self) -> None:
        for e in self.entries:
            for key in ("audio", "noise_audio", "features", "alignment"):
                if e.get(key) and not self.path(e[key]).exists():
                    raise DataError(f"{e['id']}: missing {key} file {e[key]}")

    def frontend(self) -> FrontendConfig:
        return FrontendConfig(**self.header["frontend"])


def manifest_checksum(path: str | Path) -> str:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    return hashlib.sha256(path.read_bytes()).hexdigest()


def check_disjoint(manifest: CorpusManifest) -> None:
    spk = manifest.speakers_of("paired_noisy") & manifest.speakers_of("unpaired_noisy")
    if spk:
        raise DataError(f"speakers shared between paired and unpaired data: {sorted(spk)}")
    src = manifest.noise_sources_of("paired_noisy") & manifest.noise_sources_of("unpaired_noisy")
    if src:
        raise DataError(f"noise sources shared between paired and unpaired data: {sorted(src)}")


# ---------------------------------------------------------------------------
# toy data

def _phoneme_table(n_phonemes: int, rng: np.random.Generator) -> list[dict]:
    return [{"ratio": float(rng.uniform(0.8, 1.3)),
             "f1": float(rng.uniform(300, 900)),
             "f2": float(rng.uniform(1100, 2800)),
             "amp": float(rng.uniform(0.5, 1.0))} for _ in range(n_phonemes)]


def _smooth(x: np.ndarray, width: int) -> np.ndarray:
    if width <= 1 or x.size <= width:
        return x
    kernel = np.hanning(width)
    kernel /= kernel.sum()
    padded = np.pad(x, (width // 2, width - width // 2 - 1), mode="edge")
    return np.convolve(padded, kernel, mode="valid")


def synth_tone_utterance(phonemes, durations, table, speaker_f0, fe: FrontendConfig):
    """Harmonic tone whose pitch, formants and loudness follow the phoneme sequence.

    Phoneme i occupies frames [sum(d[:i]), sum(d[:i+1])); the sample count is chosen so
    that the frame-count formula gives exactly ``sum(durations)`` frames.
    """
    hop, sr = fe.hop_length, fe.sample_rate
    frames = int(np.sum(durations))
    n = frames * hop - 1
    per_sample = np.repeat(np.repeat(np.asarray(phonemes), durations), hop)[:n]
    f0 = _smooth(np.array([table[p]["ratio"] for p in per_sample]) * speaker_f0, hop // 2)
    amp = _smooth(np.array([table[p]["amp"] for p in per_sample]), hop // 2)
    f1 = _smooth(np.array([table[p]["f1"] for p in per_sample]), hop // 2)
    f2 = _smooth(np.array([table[p]["f2"] for p in per_sample]), hop // 2)
    phase = 2 * np.pi * np.cumsum(f0) / sr
    out = np.zeros(n)
    for k in range(1, int(5000 / f0.min()) + 1):
        fk = k * f0
        env = (np.exp(-0.5 * ((fk - f1) / 150.0) ** 2)
               + 0.6 * np.exp(-0.5 * ((fk - f2) / 250.0) ** 2) + 0.05)
        env = np.where(fk < 5000, env, 0.0)
        out += env * np.sin(k * phase) / np.sqrt(k)
    ramp = np.minimum(1.0, np.minimum(np.arange(n), np.arange(n)[::-1]) / 200.0)
    out *= amp * ramp
    return 0.1 * out / audio.rms(out)


def synth_noise(kind: int, seconds: float, sr: int, rng: np.random.Generator) -> np.ndarray:
    n = int(seconds * sr)
    white = rng.standard_normal(n)
    t = np.arange(n) / sr
    if kind == 0:  # rumble
        x = signal.sosfilt(signal.butter(4, 400, "lowpass", fs=sr, output="sos"), white)
    elif kind == 1:  # hiss
        x = signal.sosfilt(signal.butter(4, 3000, "highpass", fs=sr, output="sos"), white)
    elif kind == 2:  # band noise switching on and off a few times per second
        band = signal.sosfilt(signal.butter(4, [900, 1800], "bandpass", fs=sr, output="sos"), white)
        x = band * (0.15 + (np.sin(2 * np.pi * 2.5 * t) > 0))
    elif kind == 3:  # hum with harmonics plus a little hiss
        x = sum(np.sin(2 * np.pi * 60 * k * t + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 6))
        x = x + 0.2 * white
    else:
        lo = rng.uniform(200, 4000)
        band = signal.sosfilt(signal.butter(4, [lo, lo * 1.6], "bandpass", fs=sr, output="sos"),
                              white)
        rate = rng.uniform(0.5, 4.0)
        x = band * (0.3 + 0.7 * (0.5 + 0.5 * np.sin(2 * np.pi * rate * t)))
    return 0.1 * x / audio.rms(x)


def generate_toy_corpus(cfg: CorpusConfig, fe: FrontendConfig, root: str | Path,
                        seed: int = 0) -> CorpusManifest:
    """Write a clean synthetic corpus plus a noise bank under ``root``.

    Returns a manifest whose entries are all clean; pass it to
    :func:`build_artificial_corpus` to mix in noise.
    """
    root = Path(root)
    rng = np.random.default_rng([seed, 1])
    table = _phoneme_table(cfg.n_phonemes, rng)
    speakers = [f"spk{i:02d}" for i in range(cfg.n_speakers)]
    speaker_f0 = {s: float(rng.uniform(100, 190)) for s in speakers}
    symbols = [CHARSET[i % 26] for i in range(cfg.n_phonemes)]
    if len(set(symbols)) != len(symbols):
        raise ConfigError("toy corpora support at most 26 phonemes")

    entries = []
    for u in range(cfg.n_utterances):
        spk = speakers[u % cfg.n_speakers]
        n_ph = int(rng.integers(cfg.min_phonemes, cfg.max_phonemes + 1))
        phonemes = rng.integers(0, cfg.n_phonemes, n_ph).tolist()
        durations = rng.integers(cfg.min_duration, cfg.max_duration + 1, n_ph).tolist()
        wav = synth_tone_utterance(phonemes, durations, table, speaker_f0[spk], fe)
        uid = f"{spk}_{u:04d}"
        rel = f"clean/{spk}/{uid}.wav"
        (root / rel).parent.mkdir(parents=True, exist_ok=True)
        audio.write_wav(root / rel, Waveform(wav, fe.sample_rate))
        entries.append({"id": uid, "speaker": spk, "condition_class": "clean",
                        "audio": rel, "phonemes": [symbols[p] for p in phonemes],
                        "durations": durations, "transcript": "".join(symbols[p] for p in phonemes),
                        "split": "train"})

    noise_bank = []
    (root / "noise_bank").mkdir(parents=True, exist_ok=True)
    for k in range(cfg.n_noise_files):
        rel = f"noise_bank/noise{k:02d}.wav"
        audio.write_wav(root / rel, Waveform(synth_noise(k, 2.0, fe.sample_rate, rng),
                                             fe.sample_rate))
        noise_bank.append(rel)

    header = {"frontend": dataclasses.asdict(fe), "speakers": speakers, "phonemes": symbols,
              "chars": CHARSET, "seed": seed, "noise_bank": noise_bank, "toy": True}
    return CorpusManifest(header, entries, root)


def scan_clean_corpus(clean_dir: str | Path, noise_dir: str | Path, fe: FrontendConfig,
                      root: str | Path) -> CorpusManifest:
    """Index user-supplied data: ``clean_dir/<speaker>/<utt>.wav`` with a sibling
    ``<utt>.tsv`` alignment (phoneme, start_s, end_s) and ``<utt>.txt`` transcript;
    ``noise_dir/*.wav`` noise sources."""
    clean_dir, noise_dir, root = Path(clean_dir), Path(noise_dir), Path(root)
    entries, symbols = [], set()
    for wav in sorted(clean_dir.glob("*/*.wav")):
        tsv, txt = wav.with_suffix(".tsv"), wav.with_suffix(".txt")
        if not tsv.exists():
            raise DataError(f"missing alignment {tsv}")
        phones = [row[0] for row in _read_alignment(tsv)]
        symbols.update(phones)
        entries.append({"id": f"{wav.parent.name}_{wav.stem}", "speaker": wav.parent.name,
                        "condition_class": "clean", "audio": _rel(wav, root),
                        "alignment": _rel(tsv, root), "phonemes": phones,
                        "transcript": txt.read_text().strip() if txt.exists() else "",
                        "split": "train"})
    if not entries:
        raise DataError(f"no speaker/*.wav files under {clean_dir}")
    noise_bank = [_rel(p, root) for p in sorted(noise_dir.glob("*.wav"))]
    header = {"frontend": dataclasses.asdict(fe),
              "speakers": sorted({e["speaker"] for e in entries}),
              "phonemes": sorted(symbols), "chars": CHARSET, "noise_bank": noise_bank,
              "toy": False}
    return CorpusManifest(header, entries, root)


def _rel(path: Path, root: Path) -> str:
    return os.path.relpath(Path(path).resolve(), Path(root).resolve())


# ---------------------------------------------------------------------------
# artificial noisy corpus

def build_artificial_corpus(clean: CorpusManifest, noise_bank: list[str], cfg: CorpusConfig,
                            seed: int = 0, root: str | Path | None = None) -> CorpusManifest:
    """Mark a seeded ceil(S * noisy_fraction) speakers noisy and mix all their utterances.

    Noisy speakers are split into paired and unpaired groups that draw from disjoint
    halves of the noise bank. Paired entries keep the scaled noise as their target.
    """
    root = Path(root) if root is not None else clean.root
    fe = clean.frontend()
    rng = np.random.default_rng([seed, 2])
    speakers = sorted({e["speaker"] for e in clean.entries})
    n_noisy = math.ceil(len(speakers) * cfg.noisy_fraction)
    if n_noisy < 2 or len(noise_bank) < 2:
        raise ConfigError("need at least 2 noisy speakers and 2 noise files so that paired and "
                          "unpaired data can use disjoint speakers and noise")
    noisy = [speakers[i] for i in sorted(rng.choice(len(speakers), n_noisy, replace=False))]
    order = rng.permutation(n_noisy)
    n_paired = min(n_noisy - 1, max(1, round(n_noisy * cfg.paired_fraction)))
    paired_spk = {noisy[i] for i in order[:n_paired]}
    bank = [noise_bank[i] for i in rng.permutation(len(noise_bank))]
    n_paired_noise = min(len(bank) - 1, max(1, round(len(bank) * cfg.paired_fraction)))
    partition = {"paired_noisy": sorted(bank[:n_paired_noise]),
                 "unpaired_noisy": sorted(bank[n_paired_noise:])}
    noise_cache = {rel: audio.read_wav(clean.path(rel)) for rel in noise_bank}

    entries = []
    for e in clean.entries:
        e = dict(e)
        e["audio"] = _rel(clean.path(e["audio"]), root)
        if e.get("alignment"):
            e["alignment"] = _rel(clean.path(e["alignment"]), root)
        if e["speaker"] in noisy:
            cls = "paired_noisy" if e["speaker"] in paired_spk else "unpaired_noisy"
            src = partition[cls][int(rng.integers(len(partition[cls])))]
            snr = float(rng.uniform(cfg.snr_min, cfg.snr_max))
            cw = audio.read_wav(clean.path(e["audio"]))
            noisy_w, scaled = audio.mix_at_snr(cw, noise_cache[src], snr, rng)
            peak = float(np.max(np.abs(noisy_w.samples)))
            rescale = 0.99 / peak if peak > 0.99 else 1.0  # clipping guard, SNR unchanged
            e.update(condition_class=cls, noise_source=_rel(clean.path(src), root),
                     snr_db=snr,
                     snr_measured=audio.measured_snr(cw.samples, scaled.samples),
                     rescale=rescale)
            e["audio"] = f"audio/{e['id']}.wav"
            (root / "audio").mkdir(parents=True, exist_ok=True)
            audio.write_wav(root / e["audio"], Waveform(noisy_w.samples * rescale, fe.sample_rate))
            if cls == "paired_noisy":
                e["noise_audio"] = f"noise/{e['id']}.wav"
                (root / "noise").mkdir(parents=True, exist_ok=True)
                audio.write_wav(root / e["noise_audio"],
                                Waveform(scaled.samples * rescale, fe.sample_rate))
        entries.append(e)

    _assign_splits(entries, cfg.validation_fraction, rng)
    header = dict(clean.header)
    header.update(seed=seed, noisy_speakers=noisy, paired_speakers=sorted(paired_spk),
                  noise_bank_partition=partition,
                  snr_range=[cfg.snr_min, cfg.snr_max])
    manifest = CorpusManifest(header, entries, root)
    check_disjoint(manifest)
    return manifest


def _assign_splits(entries: list[dict], fraction: float, rng: np.random.Generator) -> None:
    """Hold out ``fraction`` of each condition class, keeping at least one training item."""
    for cls in CONDITION_CLASSES:
        idx = [i for i, e in enumerate(entries) if e["condition_class"] == cls]
        n_val = min(len(idx) - 1, int(round(len(idx) * fraction))) if idx else 0
        held = set(rng.choice(idx, n_val, replace=False).tolist()) if n_val > 0 else set()
        for i in idx:
            entries[i]["split"] = "validation" if i in held else "train"


# ---------------------------------------------------------------------------
# durations and features

def _read_alignment(path: Path) -> list[tuple[str, float, float]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}: expected phoneme<TAB>start<TAB>end, got {line!r}")
        rows.append((parts[0], float(parts[1]), float(parts[2])))
    return rows


def load_durations(alignment, mel_frames: int, fe: FrontendConfig) -> list[int]:
    """Frame durations from (phoneme, start_s, end_s) spans.

    Span boundaries are rounded to the nearest frame; whatever residual remains is
    given to the final phoneme so the durations sum to ``mel_frames`` exactly.
    """
    rows = _read_alignment(alignment) if isinstance(alignment, (str, Path)) else list(alignment)
    if not rows:
        raise AlignmentMismatchError("empty alignment")
    frames_per_s = fe.sample_rate / fe.hop_length
    bounds = [int(round(rows[0][1] * frames_per_s))] + [int(round(r[2] * frames_per_s)) for r in rows]
    if bounds[0] != 0:
        # leading silence is folded into the first phoneme
        bounds[0] = 0
    if abs(bounds[-1] - mel_frames) > 1:
        raise AlignmentMismatchError(
            f"alignment covers {bounds[-1]} frames but the audio has {mel_frames}")
    durations = [max(0, b - a) for a, b in zip(bounds[:-1], bounds[1:])]
    durations[-1] += mel_frames - sum(durations)
    if durations[-1] < 0:
        raise AlignmentMismatchError("alignment spans are not monotonic")
    return durations


def extract_features(manifest: CorpusManifest, overwrite: bool = False) -> CorpusManifest:
    """Compute mel / pitch / durations for every entry and store them as npz files."""
    fe = manifest.frontend()
    (manifest.root / "features").mkdir(parents=True, exist_ok=True)
    for e in manifest.entries:
        rel = f"features/{e['id']}.npz"
        e["features"] = rel
        if manifest.path(rel).exists() and not overwrite:
            continue
        w = audio.read_wav(manifest.path(e["audio"]))
        mel = audio.mel_spectrogram(w, fe)
        f0 = audio.extract_f0(w, fe)
        if "durations" in e:
            durations = list(e["durations"])
        else:
            durations = load_durations(manifest.path(e["alignment"]), mel.shape[0], fe)
        arrays = {"mel": mel.astype(np.float32), "pitch": f0.astype(np.float32),
                  "durations": np.asarray(durations, dtype=np.int64)}
        if e["condition_class"] == "paired_noisy":
            arrays["noise_mel"] = audio.mel_spectrogram(
                audio.read_wav(manifest.path(e["noise_audio"])), fe).astype(np.float32)
        np.savez(manifest.path(rel), **arrays)
    return manifest


@dataclass
class Utterance:
    id: str
    speaker: str
    speaker_index: int
    condition_class: str
    phoneme_ids: np.ndarray
    durations: np.ndarray
    transcript_chars: np.ndarray
    mel: np.ndarray
    pitch: np.ndarray
    noise_mel: np.ndarray | None = None

    def __post_init__(self):
        frames = self.mel.shape[0]
        if len(self.durations) != len(self.phoneme_ids):
            raise DataError(f"{self.id}: one duration per phoneme is required")
        if np.any(self.durations < 0) or int(self.durations.sum()) != frames:
            raise DataError(f"{self.id}: durations sum to {int(self.durations.sum())}, "
                            f"mel has {frames} frames")
        if (self.noise_mel is not None) != (self.condition_class == "paired_noisy"):
            raise DataError(f"{self.id}: noise_mel must be present exactly for paired data")
        if self.noise_mel is not None and self.noise_mel.shape != self.mel.shape:
            raise DataError(f"{self.id}: noise_mel shape differs from mel")
        if self.pitch.shape[0] != frames:
            raise DataError(f"{self.id}: pitch length differs from mel frames")

    @property
    def frames(self) -> int:
        return self.mel.shape[0]


def load_utterances(manifest: CorpusManifest, split: str | None = None) -> list[Utterance]:
    spk_index = {s: i for i, s in enumerate(manifest.speakers)}
    ph_index = {p: i for i, p in enumerate(manifest.phoneme_symbols)}
    out = []
    for e in manifest.select(split=split):
        if not e.get("features"):
            raise DataError(f"{e['id']}: features not extracted")
        with np.load(manifest.path(e["features"])) as z:
            arrays = {k: z[k] for k in z.files}
        out.append(Utterance(
            id=e["id"], speaker=e["speaker"], speaker_index=spk_index[e["speaker"]],
            condition_class=e["condition_class"],
            phoneme_ids=np.array([ph_index[p] for p in e["phonemes"]], dtype=np.int64),
            durations=arrays["durations"],
            transcript_chars=np.array(encode_chars(e["transcript"]), dtype=np.int64),
            mel=arrays["mel"], pitch=arrays["pitch"], noise_mel=arrays.get("noise_mel")))
    return out


# ---------------------------------------------------------------------------
# batching

@dataclass
class Batch:
    ids: list[str]
    phonemes: torch.Tensor       # (B, N) long
    phoneme_mask: torch.Tensor   # (B, N) bool
    durations: torch.Tensor      # (B, N) long
    speakers: torch.Tensor       # (B,) long
    mel: torch.Tensor            # (B, T, M), padded with the log floor
    mel_mask: torch.Tensor       # (B, T) bool
    mel_lengths: torch.Tensor    # (B,) long
    noise_mel: torch.Tensor      # (B, T, M), log floor where absent
    pitch: torch.Tensor          # (B, T) Hz
    classes: torch.Tensor        # (B,) 0 clean / 1 paired / 2 unpaired
    transcripts: list[torch.Tensor]

    def __len__(self):
        return len(self.ids)


_CLASS_CODE = {"clean": CLEAN, "paired_noisy": PAIRED, "unpaired_noisy": UNPAIRED}


def make_batch(utterances: list[Utterance], log_floor: float, pad_to: int | None = None) -> Batch:
    if not utterances:
        raise InvalidInputError("make_batch needs at least one utterance")
    dtype = torch.get_default_dtype()
    b = len(utterances)
    n = max(len(u.phoneme_ids) for u in utterances)
    t = max(u.frames for u in utterances)
    if pad_to is not None:
        t = max(t, pad_to)
    m = utterances[0].mel.shape[1]
    phonemes = torch.zeros(b, n, dtype=torch.long)
    pmask = torch.zeros(b, n, dtype=torch.bool)
    durations = torch.zeros(b, n, dtype=torch.long)
    mel = torch.full((b, t, m), log_floor, dtype=dtype)
    noise = torch.full((b, t, m), log_floor, dtype=dtype)
    pitch = torch.zeros(b, t, dtype=dtype)
    lengths = torch.zeros(b, dtype=torch.long)
    for i, u in enumerate(utterances):
        k, f = len(u.phoneme_ids), u.frames
        phonemes[i, :k] = torch.from_numpy(u.phoneme_ids)
        pmask[i, :k] = True
        durations[i, :k] = torch.from_numpy(np.asarray(u.durations, dtype=np.int64))
        mel[i, :f] = torch.from_numpy(u.mel).to(dtype)
        if u.noise_mel is not None:
            noise[i, :f] = torch.from_numpy(u.noise_mel).to(dtype)
        pitch[i, :f] = torch.from_numpy(u.pitch).to(dtype)
        lengths[i] = f
    # trailing all-zero duration positions beyond the padded mel are fine: masked out
    mel_mask = torch.arange(t)[None, :] < lengths[:, None]
    return Batch(
        ids=[u.id for u in utterances], phonemes=phonemes, phoneme_mask=pmask,
        durations=durations, speakers=torch.tensor([u.speaker_index for u in utterances]),
        mel=mel, mel_mask=mel_mask, mel_lengths=lengths, noise_mel=noise, pitch=pitch,
        classes=torch.tensor([_CLASS_CODE[u.condition_class] for u in utterances]),
        transcripts=[torch.from_numpy(u.transcript_chars) for u in utterances])


def prepare_corpus(cfg: CorpusConfig, fe: FrontendConfig, root: str | Path, seed: int = 0,
                   ) -> CorpusManifest:
    """Build (toy or user-supplied) clean corpus, mix noise, extract features, save."""
    root = Path(root)
    if root.exists():
        shutil.rmtree(root)
    root.mkdir(parents=True)
    if cfg.toy:
        clean = generate_toy_corpus(cfg, fe, root, seed)
    else:
        clean = scan_clean_corpus(cfg.clean_dir, cfg.noise_dir, fe, root)
    manifest = build_artificial_corpus(clean, clean.header["noise_bank"], cfg, seed, root)
    extract_features(manifest)
    manifest.save()
    return manifest
