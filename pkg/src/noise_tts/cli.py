"""Command-line entry point: ``noise-tts {prepare,train-extractor,train,synth,eval,plot,ablate}``.

Every command takes ``--config run.yaml`` plus any number of ``--set section.key=value``
overrides. Exit codes: 0 ok, 2 config error, 3 data error, 4 invalid input,
5 checkpoint error, 1 anything else.

Environment: ``NOISE_TTS_OUTPUT_ROOT`` prefixes relative output directories,
``NOISE_TTS_WORKERS`` sets the torch thread count.
"""

from __future__ import annotations

import functools
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from .config import RunConfig, apply_overrides, load_config, save_config
from .errors import CheckpointError, ConfigError, DataError, InvalidInputError, NoiseTTSError

log = logging.getLogger("noise_tts")


def resolve_output(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    root = os.environ.get("NOISE_TTS_OUTPUT_ROOT")
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def _load(config: str | None, overrides: tuple[str, ...]) -> RunConfig:
    cfg = load_config(config) if config else RunConfig()
    if overrides:
        cfg = apply_overrides(cfg, list(overrides))
    cfg.validate()
    return cfg


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NoiseTTSError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)
    return wrapper


def _common(fn):
    fn = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                      help="Override a config value, e.g. train.joint_steps=200.")(fn)
    fn = click.option("--config", "-c", type=click.Path(dir_okay=False),
                      help="Run config YAML (defaults apply when omitted).")(fn)
    return _handle_errors(fn)


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    workers = os.environ.get("NOISE_TTS_WORKERS")
    if workers:
        import torch
        torch.set_num_threads(int(workers))


@main.command()
@_common
def prepare(config, overrides):
    """Build the noisy corpus (toy or from clean_dir/noise_dir) and extract features."""
    from .corpus import manifest_checksum, prepare_corpus

    cfg = _load(config, overrides)
    out = resolve_output(cfg)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yaml")
    manifest = prepare_corpus(cfg.corpus, cfg.frontend, out / "corpus", cfg.seed)
    click.echo(corpus_summary(manifest))
    click.echo(f"manifest sha256 {manifest_checksum(out / 'corpus')}")


def corpus_summary(manifest) -> str:
    lines = [f"corpus: {len(manifest.entries)} utterances, {len(manifest.speakers)} speakers"]
    for cls in ("clean", "paired_noisy", "unpaired_noisy"):
        sel = manifest.select(condition_class=cls)
        spk = sorted({e["speaker"] for e in sel})
        n_train = sum(e["split"] == "train" for e in sel)
        lines.append(f"  {cls:15s} speakers={len(spk)} train={n_train} "
                     f"validation={len(sel) - n_train}")
    snrs = [e["snr_db"] for e in manifest.entries if "snr_db" in e]
    if snrs:
        lo, hi = manifest.header["snr_range"]
        edges = np.linspace(lo, hi, 6) if hi > lo else np.array([lo - 0.5, hi + 0.5])
        counts, edges = np.histogram(snrs, bins=edges)
        lines.append("  SNR histogram (dB):")
        for c, a, b in zip(counts, edges[:-1], edges[1:]):
            lines.append(f"    [{a:5.1f}, {b:5.1f}) {'#' * int(c)} {c}")
    return "\n".join(lines)


def _manifest(out: Path):
    from .corpus import CorpusManifest
    path = out / "corpus" / "manifest.jsonl"
    if not path.exists():
        raise DataError(f"no prepared corpus at {path}; run `noise-tts prepare` first")
    return CorpusManifest.load(path)


@main.command("train-extractor")
@_common
@click.option("--resume", type=click.Path(exists=True, dir_okay=False))
def train_extractor(config, overrides, resume):
    """Warm-start the noise extractor on paired (noisy, noise) data."""
    from .training import pretrain_extractor

    cfg = _load(config, overrides)
    out = resolve_output(cfg)
    path = pretrain_extractor(_manifest(out), cfg, out / "extractor", resume=resume)
    click.echo(f"wrote {path}")


@main.command()
@_common
@click.option("--cold-start", is_flag=True, help="Skip the extractor warm start.")
@click.option("--resume", type=click.Path(exists=True, dir_okay=False))
@click.option("--label", default="", help="Write into ablations/<label>/ instead.")
def train(config, overrides, cold_start, resume, label):
    """Jointly train the acoustic model and the noise-condition module."""
    from .training import joint_train

    cfg = _load(config, overrides)
    out = resolve_output(cfg)
    warm = out / "extractor" / "extractor.ckpt"
    if cold_start:
        warm = None
    elif not warm.exists() and resume is None:
        raise ConfigError(f"missing warm-start checkpoint {warm}; run `noise-tts train-extractor` "
                          "first or pass --cold-start")
    run_dir = out / "ablations" / label if label else out
    path = joint_train(_manifest(out), warm if resume is None else None, cfg, run_dir / "joint",
                       cold_start=cold_start, resume=resume)
    click.echo(f"wrote {path}")


def _checkpoint(out: Path, checkpoint: str | None, label: str = "") -> Path:
    base = out / "ablations" / label if label else out
    path = Path(checkpoint) if checkpoint else base / "joint" / "model.ckpt"
    if not path.exists():
        raise CheckpointError(f"missing checkpoint {path}; run `noise-tts train` first")
    return path


def parse_phonemes(text: str, symbols: list[str]) -> list[int]:
    index = {s: i for i, s in enumerate(symbols)}
    ids = []
    for tok in text.split():
        if tok not in index:
            raise InvalidInputError(f"unknown phoneme {tok!r}; known: {' '.join(symbols)}")
        ids.append(index[tok])
    if not ids:
        raise InvalidInputError("no phonemes given")
    return ids


@main.command()
@_common
@click.option("--phonemes", "-p", required=True, help="Space-separated phoneme symbols.")
@click.option("--speaker", default=None, help="Speaker name (defaults to the first).")
@click.option("--durations", default=None, help="Space-separated frame counts.")
@click.option("--checkpoint", type=click.Path(dir_okay=False))
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
@click.option("--iterations", default=60, show_default=True)
def synth(config, overrides, phonemes, speaker, durations, checkpoint, out_path, iterations):
    """Synthesize clean speech for a phoneme sequence (silence-conditioned)."""
    from .audio import write_wav
    from .plotting import plot_mels
    from .synthesis import SynthesisRequest, griffin_lim, synthesize
    from .training import load_model

    cfg = _load(config, overrides)
    out = resolve_output(cfg)
    manifest = _manifest(out)
    model, _, _ = load_model(_checkpoint(out, checkpoint))
    if speaker is not None and speaker not in manifest.speakers:
        raise InvalidInputError(f"unknown speaker {speaker!r}; known: {' '.join(manifest.speakers)}")
    spk = manifest.speakers.index(speaker) if speaker else 0
    dur = [int(d) for d in durations.split()] if durations else None
    req = SynthesisRequest(parse_phonemes(phonemes, manifest.phoneme_symbols), spk, dur)
    result = synthesize(model, req, seed=cfg.seed)
    wav_path = Path(out_path) if out_path else out / "synth" / "synth.wav"
    wav_path.parent.mkdir(parents=True, exist_ok=True)
    wave = griffin_lim(result["mel"], model.frontend, iterations, seed=cfg.seed)
    write_wav(wav_path, wave)
    np.save(wav_path.with_suffix(".mel.npy"), result["mel"])
    plot_mels({"synthesized": result["mel"]}, wav_path.with_suffix(".png"),
              title=f"{phonemes} (durations {result['durations'].tolist()})",
              vmin=model.frontend.log_floor)
    click.echo(f"wrote {wav_path} ({len(wave)} samples, {result['mel'].shape[0]} frames)")


@main.command("eval")
@_common
@click.option("--split", default="validation", show_default=True)
@click.option("--checkpoint", type=click.Path(dir_okay=False))
@click.option("--label", default="")
def eval_cmd(config, overrides, split, checkpoint, label):
    """Write an objective evaluation report (TSV + JSON + spectrogram plots)."""
    from .synthesis import evaluate_manifest
    from .training import load_model

    cfg = _load(config, overrides)
    out = resolve_output(cfg)
    model, _, _ = load_model(_checkpoint(out, checkpoint, label))
    report_dir = (out / "ablations" / label if label else out) / "eval"
    report = evaluate_manifest(model, _manifest(out), split, report_dir, label)
    for k, v in report.aggregate.items():
        click.echo(f"{k:24s} {v:.4f}")
    click.echo(f"wrote {report_dir / 'report.tsv'}")


@main.command()
@_common
def plot(config, overrides):
    """Render loss curves for every stage found in the output directory."""
    from .plotting import plot_loss_curves
    from .training import read_loss_log

    cfg = _load(config, overrides)
    out = resolve_output(cfg)
    logs = sorted(out.glob("**/losses.tsv"))
    if not logs:
        raise DataError(f"no losses.tsv under {out}")
    for path in logs:
        rows = read_loss_log(path)
        for split in ("train", "validation"):
            dest = plot_loss_curves(rows, path.parent / f"loss_{split}.png", split)
            click.echo(f"wrote {dest}")


@main.command()
@_common
@click.option("--steps", type=int, default=None, help="Joint steps per setting.")
def ablate(config, overrides, steps):
    """Run the granularity / fixed-extractor / adversarial-CTC ablation grid."""
    from .ablation import run_ablations

    cfg = _load(config, overrides)
    out = resolve_output(cfg)
    results = run_ablations(cfg, out, joint_steps=steps)
    for label, res in results.items():
        click.echo(f"{label:24s} mel_mae={res['report'].aggregate['mel_mae']:.4f}")


if __name__ == "__main__":
    main()
