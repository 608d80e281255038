"""Silence-conditioned synthesis, Griffin-Lim reconstruction and objective evaluation.

Perceptual scores (MOS/CMOS) are not computed anywhere in this package; the evaluation
report lists objective proxies only.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import librosa
import numpy as np
import torch

from . import plotting
from .audio import Waveform, mel_basis, normalize_mel
from .backbone import durations_from_log
from .config import FrontendConfig
from .corpus import CorpusManifest, Utterance, load_utterances, make_batch
from .errors import ConfigError, InvalidInputError
from .model import NoiseConditionedTTS
from .primitives import mae, mssim_loss

METRICS = ("mel_mae", "mel_mssim", "duration_frame_error", "extractor_mae", "extractor_snr_gain_db")
LOWER_IS_BETTER = {"mel_mae": True, "mel_mssim": True, "duration_frame_error": True,
                   "extractor_mae": True, "extractor_snr_gain_db": False}


@dataclass
class SynthesisRequest:
    phoneme_ids: list[int]
    speaker: int = 0
    durations: list[int] | None = None
    granularity: str | None = None

    def __post_init__(self):
        if len(self.phoneme_ids) == 0:
            raise InvalidInputError("phoneme sequence is empty")
        if self.durations is not None and len(self.durations) != len(self.phoneme_ids):
            raise InvalidInputError("duration override needs one value per phoneme")


def synthesize(model: NoiseConditionedTTS, req: SynthesisRequest, seed: int = 0) -> dict:
    """Clean-speech mel for ``req``: predicted (or given) durations, silence noise input."""
    torch.manual_seed(seed)
    model.eval()
    out = model.infer(req.phoneme_ids, req.speaker, req.durations, None, req.granularity)
    return {k: v.numpy() for k, v in out.items()}


def griffin_lim(mel: np.ndarray, fe: FrontendConfig, iterations: int = 60,
                seed: int = 0) -> Waveform:
    """Invert a (frames, n_mels) log-mel: pseudo-inverse to linear magnitude, then
    iterative phase reconstruction. Output has ``(frames - 1) * hop`` samples."""
    mel = np.asarray(mel, dtype=np.float64)
    amp = np.exp(mel).T
    linear = np.maximum(np.linalg.pinv(mel_basis(fe)) @ amp, 0.0)
    frames = mel.shape[0]
    length = max(1, (frames - 1) * fe.hop_length)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # very short outputs, see audio.stft_magnitude
        y = librosa.griffinlim(linear, n_iter=iterations, hop_length=fe.hop_length,
                               win_length=fe.win_length, n_fft=fe.n_fft, window="hann",
                               center=True, pad_mode="reflect", length=length,
                               random_state=seed)
    return Waveform(np.clip(y, -1.0, 1.0), fe.sample_rate)


# ---------------------------------------------------------------------------
# evaluation

def snr_gain_db(extracted: np.ndarray, noise: np.ndarray, noisy: np.ndarray) -> float:
    """How much closer the extracted noise is to the true noise than the noisy input is.

    Both estimates are scored as 10*log10(|N|^2 / |estimate - N|^2) on linear mel
    amplitudes; the gain is the difference (extracted minus noisy-input baseline).
    """
    n = np.exp(noise)
    err_ext = np.sum((np.exp(extracted) - n) ** 2)
    err_in = np.sum((np.exp(noisy) - n) ** 2)
    return float(10 * np.log10(err_in / max(err_ext, 1e-30)))


def utterance_metrics(mel_pred, mel_true, dur_pred, dur_true, fe: FrontendConfig,
                      extracted=None, noise_mel=None) -> dict[str, float]:
    mel_pred = torch.as_tensor(mel_pred, dtype=torch.float64)
    mel_true = torch.as_tensor(mel_true, dtype=torch.float64)
    row = {
        "mel_mae": float(mae(mel_pred, mel_true)),
        "mel_mssim": float(mssim_loss(normalize_mel(mel_pred, fe), normalize_mel(mel_true, fe))),
        "duration_frame_error": float(np.mean(np.abs(np.asarray(dur_pred, dtype=float)
                                                     - np.asarray(dur_true, dtype=float)))),
        "extractor_mae": math.nan,
        "extractor_snr_gain_db": math.nan,
    }
    if extracted is not None and noise_mel is not None:
        row["extractor_mae"] = float(np.mean(np.abs(np.asarray(extracted) - np.asarray(noise_mel))))
        row["extractor_snr_gain_db"] = snr_gain_db(np.asarray(extracted), np.asarray(noise_mel),
                                                   mel_true.numpy())
    return row


@dataclass
class EvalReport:
    rows: list[dict]
    aggregate: dict[str, float]
    plots: list[str] = field(default_factory=list)
    label: str = ""

    @classmethod
    def from_rows(cls, rows, plots=(), label=""):
        agg = {}
        for m in METRICS:
            vals = [r[m] for r in rows if not math.isnan(r[m])]
            agg[m] = float(np.mean(vals)) if vals else math.nan
        return cls(rows, agg, list(plots), label)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cols = ["id", "condition_class", *METRICS]
        with open(out / "report.tsv", "w", newline="") as fh:
            wr = csv.writer(fh, delimiter="\t", lineterminator="\n")
            wr.writerow(cols)
            for r in self.rows:
                wr.writerow([r["id"], r["condition_class"]] + [repr(r[m]) for m in METRICS])
            wr.writerow(["MEAN", "all"] + [repr(self.aggregate[m]) for m in METRICS])
        (out / "report.json").write_text(json.dumps({
            "label": self.label,
            "note": "objective proxies only; perceptual MOS/CMOS scores are not computed",
            "aggregate": self.aggregate, "rows": self.rows, "plots": self.plots,
        }, indent=2, allow_nan=True))
        return out / "report.tsv"


def read_report(path) -> tuple[list[dict], dict]:
    rows, agg = [], {}
    with open(path) as fh:
        for r in csv.DictReader(fh, delimiter="\t"):
            vals = {m: float(r[m]) for m in METRICS}
            if r["id"] == "MEAN":
                agg = vals
            else:
                rows.append({"id": r["id"], "condition_class": r["condition_class"], **vals})
    return rows, agg


@torch.no_grad()
def evaluate(model: NoiseConditionedTTS, utts: list[Utterance], out_dir=None,
             label: str = "", max_plots: int = 4) -> EvalReport:
    """Teacher-forced reconstruction, duration accuracy and extractor quality per utterance."""
    if not utts:
        raise ConfigError("evaluation split is empty")
    model.eval()
    fe = model.frontend
    rows, plots = [], []
    for u in utts:
        batch = make_batch([u], fe.log_floor)
        out = model(batch, use_adversarial_ctc=False)
        mel_pred = out.mel_pred[0].numpy()
        dur_pred = durations_from_log(out.log_dur_pred[0]).numpy()
        extracted = out.extracted.get(0)
        extracted = extracted.numpy() if extracted is not None else None
        row = {"id": u.id, "condition_class": u.condition_class}
        row.update(utterance_metrics(mel_pred, u.mel, dur_pred, u.durations, fe,
                                     extracted, u.noise_mel))
        rows.append(row)
        if out_dir is not None and len(plots) < max_plots:
            path = plotting.plot_mels(
                {"target": u.mel, "predicted (teacher-forced)": mel_pred,
                 "noise-encoder input": out.noise_input[0].numpy(),
                 "extracted noise": extracted},
                Path(out_dir) / "plots" / f"{u.id}.png",
                title=f"{label + ': ' if label else ''}{u.id} [{u.condition_class}]",
                vmin=fe.log_floor)
            plots.append(str(Path("plots") / path.name))
    report = EvalReport.from_rows(rows, plots, label)
    if out_dir is not None:
        report.write(out_dir)
    return report


def evaluate_manifest(model, manifest: CorpusManifest, split: str = "validation",
                      out_dir=None, label: str = "") -> EvalReport:
    utts = load_utterances(manifest, split)
    if not utts and split == "validation":
        utts = load_utterances(manifest, "train")
    return evaluate(model, utts, out_dir, label)
