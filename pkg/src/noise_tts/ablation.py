"""Ablation grid over the noise condition: granularity, frozen extractor, adversarial CTC.

Every setting is trained from the same warm-started extractor into
``<out>/ablations/<label>/`` and evaluated on the same split. Parameter hashes taken
before and after training confirm that frozen groups really stayed frozen.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from pathlib import Path

from . import checkpoint as ckpt
from . import plotting
from .config import RunConfig, save_config
from .corpus import CorpusManifest, prepare_corpus
from .errors import NoiseTTSError
from .synthesis import METRICS, evaluate_manifest
from .training import joint_train, load_model, pretrain_extractor

log = logging.getLogger(__name__)

# label -> (granularity, fix_extractor, use_adversarial_ctc)
SETTINGS = {
    "frame": ("frame", False, True),
    "utterance": ("utterance", False, True),
    "none": ("none", False, True),
    "fixed_extractor": ("frame", True, True),
    "no_adversarial_ctc": ("frame", False, False),
}


def setting_config(base: RunConfig, label: str) -> RunConfig:
    granularity, fix, adv = SETTINGS[label]
    cfg = dataclasses.replace(
        base,
        model=dataclasses.replace(base.model, granularity=granularity),
        train=dataclasses.replace(base.train, fix_extractor=fix, use_adversarial_ctc=adv))
    cfg.validate()
    return cfg


def run_ablations(base: RunConfig, out_dir, labels=None, joint_steps: int | None = None,
                  split: str = "validation") -> dict[str, dict]:
    """Train and evaluate each setting. Reuses ``corpus/`` and ``extractor/`` if present."""
    out = Path(out_dir)
    labels = list(SETTINGS) if labels is None else list(labels)
    unknown = set(labels) - set(SETTINGS)
    if unknown:
        raise NoiseTTSError(f"unknown ablation labels {sorted(unknown)}")
    manifest_path = out / "corpus" / "manifest.jsonl"
    if manifest_path.exists():
        manifest = CorpusManifest.load(manifest_path)
    else:
        manifest = prepare_corpus(base.corpus, base.frontend, out / "corpus", base.seed)
    warm = out / "extractor" / "extractor.ckpt"
    if not warm.exists():
        warm = pretrain_extractor(manifest, base, out / "extractor")
    warm_model, _, _ = load_model(warm)
    warm_hash = {g: ckpt.parameter_hash(warm_model, g + ".") for g in ("extractor", "ctc_head")}

    results = {}
    for label in labels:
        cfg = setting_config(base, label)
        run_dir = out / "ablations" / label
        run_dir.mkdir(parents=True, exist_ok=True)
        save_config(cfg, run_dir / "config.yaml")
        path = joint_train(manifest, warm, cfg, run_dir / "joint", steps=joint_steps)
        model, _, _ = load_model(path)
        hashes = {g: ckpt.parameter_hash(model, g + ".") for g in ("extractor", "ctc_head")}
        frozen = {
            "extractor": hashes["extractor"] == warm_hash["extractor"],
            "ctc_head": hashes["ctc_head"] == warm_hash["ctc_head"],
        }
        if cfg.train.fix_extractor and not frozen["extractor"]:
            raise NoiseTTSError(f"{label}: extractor changed although it was fixed")
        if not cfg.train.use_adversarial_ctc and not frozen["ctc_head"]:
            raise NoiseTTSError(f"{label}: CTC head changed although adversarial CTC was off")
        report = evaluate_manifest(model, manifest, split, run_dir / "eval", label)
        results[label] = {"checkpoint": path, "report": report, "hashes": hashes,
                          "unchanged": frozen}
        log.info("ablation %s: mel_mae %.4f", label, report.aggregate["mel_mae"])
    write_summary(results, out / "ablations")
    return results


def write_summary(results: dict[str, dict], out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = list(results)
    with open(out / "summary.tsv", "w", newline="") as fh:
        wr = csv.writer(fh, delimiter="\t", lineterminator="\n")
        wr.writerow(["label", *METRICS, "extractor_unchanged", "ctc_head_unchanged"])
        for label in labels:
            r = results[label]
            wr.writerow([label, *(repr(r["report"].aggregate[m]) for m in METRICS),
                         r["unchanged"]["extractor"], r["unchanged"]["ctc_head"]])
    values = {m: [results[lb]["report"].aggregate[m] for lb in labels]
              for m in ("mel_mae", "mel_mssim", "duration_frame_error")}
    plotting.plot_metric_bars(labels, values, out / "summary.png", title="ablations")
    return out / "summary.tsv"
