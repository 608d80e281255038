"""Two-stage training: noise-extractor warm start, then joint training.

Randomness is re-derived from ``(seed, stage, step)`` at every step (batch choice and
dropout), so a run resumed from a checkpoint replays the uninterrupted trajectory.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .audio import normalize_mel
from .backbone import log_duration_target, pitch_to_target
from .config import FrontendConfig, ModelConfig, RunConfig, TrainConfig
from .corpus import Batch, CorpusManifest, Utterance, load_utterances, make_batch, n_chars
from .errors import CheckpointError, ConfigError, NoiseTTSError
from .model import PAIRED, ForwardOutputs, NoiseConditionedTTS
from .noise_condition import adversarial_ctc_loss
from .primitives import ctc_loss, mae, mse, mssim_loss

log = logging.getLogger(__name__)

STAGE_EXTRACTOR = "extractor"
STAGE_JOINT = "joint"


def model_config_for(manifest: CorpusManifest, base: ModelConfig) -> ModelConfig:
    """Size the vocabulary/speaker tables from the corpus."""
    return dataclasses.replace(base, n_phonemes=len(manifest.phoneme_symbols),
                               n_speakers=len(manifest.speakers), n_chars=n_chars(),
                               n_mels=manifest.frontend().n_mels)


def same_architecture(a: dict, b: dict) -> bool:
    """Model configs equal up to fields that do not change the parameter set."""
    ignore = {"granularity"}
    return {k: v for k, v in a.items() if k not in ignore} == \
        {k: v for k, v in b.items() if k not in ignore}


def build_model(model_cfg: ModelConfig, fe: FrontendConfig, seed: int) -> NoiseConditionedTTS:
    torch.manual_seed(seed)
    return NoiseConditionedTTS(model_cfg, fe)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Inverse square-root schedule with linear warm-up; ``step`` counts from 1."""
    step = max(step, 1)
    if cfg.warmup_steps == 0:
        return cfg.lr
    return cfg.lr * min(step / cfg.warmup_steps, math.sqrt(cfg.warmup_steps / step))


# ---------------------------------------------------------------------------
# losses

def total_loss(out: ForwardOutputs, batch: Batch, fe: FrontendConfig, cfg: TrainConfig,
               use_adversarial_ctc: bool | None = None):
    """Weighted sum of all terms plus the per-term breakdown.

    Every term is a mean over the batch of per-utterance values; utterances that a term
    does not apply to (clean ones for the extractor term, non-unpaired ones for the
    adversarial term) contribute 0 to that mean.
    """
    w = cfg.loss_weights
    use_adv = cfg.use_adversarial_ctc if use_adversarial_ctc is None else use_adversarial_ctc
    b = len(batch)
    mel_mae = mae(out.mel_pred, batch.mel, out.mel_mask, per_item=True).mean()
    mel_ssim = mssim_loss(normalize_mel(out.mel_pred, fe), normalize_mel(batch.mel, fe),
                          out.mel_mask, per_item=True).mean()
    dur = mse(out.log_dur_pred, log_duration_target(batch.durations).to(out.log_dur_pred.dtype),
              out.phoneme_mask, per_item=True).mean()
    pitch = mae(out.pitch_pred, pitch_to_target(batch.pitch), out.mel_mask, per_item=True).mean()
    zero = out.mel_pred.new_zeros(())
    ext = zero
    for i, e in out.extracted.items():
        if int(batch.classes[i]) == PAIRED:
            t = int(batch.mel_lengths[i])
            ext = ext + mae(e, batch.noise_mel[i, :t])
    ext = ext / b
    terms = {"mel_mae": mel_mae, "mel_mssim": mel_ssim, "duration": dur, "pitch": pitch,
             "extractor": ext}
    total = w.mel * (mel_mae + mel_ssim) + w.duration * dur + w.pitch * pitch + w.extractor * ext
    if use_adv:
        adv = sum(out.ctc.values(), zero) / b
        terms["adversarial"] = adv
        total = total + w.adversarial * adv
    terms["total"] = total
    return total, terms


def extractor_loss(model: NoiseConditionedTTS, utts: list[Utterance]) -> torch.Tensor:
    dtype = torch.get_default_dtype()
    losses = [mae(model.extract(torch.from_numpy(u.mel).to(dtype)),
                  torch.from_numpy(u.noise_mel).to(dtype)) for u in utts]
    return torch.stack(losses).mean()


# ---------------------------------------------------------------------------
# state, logging, checkpoints

@dataclass
class TrainState:
    model: NoiseConditionedTTS
    optimizer: torch.optim.Optimizer
    param_names: list[str]
    stage: str
    seed: int
    step: int = 0
    best_val: float = math.inf

    def save(self, path: Path, run_cfg: RunConfig) -> Path:
        tensors = ckpt.model_tensors(self.model)
        params = dict(self.model.named_parameters())
        for name in self.param_names:
            st = self.optimizer.state.get(params[name])
            if not st:
                continue
            for slot in ("exp_avg", "exp_avg_sq"):
                tensors[f"optim/{name}/{slot}"] = st[slot]
            tensors[f"optim/{name}/step"] = torch.as_tensor(st["step"]).reshape(1).double()
        header = {"model_config": dataclasses.asdict(self.model.cfg),
                  "frontend": dataclasses.asdict(self.model.frontend),
                  "train_config": dataclasses.asdict(run_cfg.train),
                  "meta": {"stage": self.stage, "step": self.step, "seed": self.seed,
                           "trainable": self.param_names, "best_val": self.best_val}}
        return ckpt.save_checkpoint(path, tensors, header)


def make_optimizer(model, names: list[str], cfg: TrainConfig) -> torch.optim.Optimizer:
    params = dict(model.named_parameters())
    return torch.optim.Adam([params[n] for n in names], lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
                            eps=cfg.eps)


def restore_optimizer(opt, model, names, tensors) -> None:
    params = dict(model.named_parameters())
    for name in names:
        key = f"optim/{name}/exp_avg"
        if key not in tensors:
            continue
        p = params[name]
        opt.state[p] = {"step": tensors[f"optim/{name}/step"].reshape(()).float(),
                        "exp_avg": tensors[key].clone(),
                        "exp_avg_sq": tensors[f"optim/{name}/exp_avg_sq"].clone()}


def load_model(path: str | Path) -> tuple[NoiseConditionedTTS, dict, dict]:
    tensors, header = ckpt.load_checkpoint(path)
    try:
        mcfg = ModelConfig(**header["model_config"])
        fe = FrontendConfig(**header["frontend"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed config in header") from exc
    model = NoiseConditionedTTS(mcfg, fe)
    ckpt.load_model_state(model, tensors)
    return model, header, tensors


class LossLog:
    """Tab-separated ``stage step split term value`` records."""

    columns = ("stage", "step", "split", "term", "value")

    def __init__(self, path: Path, keep_until: int | None = None, stage: str | None = None):
        self.path = Path(path)
        rows = []
        if keep_until is not None and self.path.exists():
            with open(self.path) as fh:
                for r in csv.DictReader(fh, delimiter="\t"):
                    # rows of other stages survive; this stage's rows only up to the resume point
                    if r["stage"] != stage or 0 < keep_until and int(r["step"]) <= keep_until:
                        rows.append([r[c] for c in self.columns])
        with open(self.path, "w", newline="") as fh:
            wr = csv.writer(fh, delimiter="\t", lineterminator="\n")
            wr.writerow(self.columns)
            wr.writerows(rows)

    def write(self, stage, step, split, terms: dict[str, float]) -> None:
        with open(self.path, "a", newline="") as fh:
            wr = csv.writer(fh, delimiter="\t", lineterminator="\n")
            for term, value in terms.items():
                wr.writerow([stage, step, split, term, repr(float(value))])


def read_loss_log(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [{**r, "step": int(r["step"]), "value": float(r["value"])}
                for r in csv.DictReader(fh, delimiter="\t")]


def _step_rng(seed: int, stage: str, step: int) -> np.random.Generator:
    torch.manual_seed((seed * 1_000_003 + step * 7 + (stage == STAGE_JOINT)) % (2 ** 63))
    return np.random.default_rng([seed, step, stage == STAGE_JOINT])


def _clip_and_step(state: TrainState, cfg: TrainConfig) -> None:
    params = dict(state.model.named_parameters())
    trainable = [params[n] for n in state.param_names]
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(trainable, cfg.grad_clip)
    for g in state.optimizer.param_groups:
        g["lr"] = lr_at(state.step + 1, cfg)
    state.optimizer.step()
    state.model.zero_grad(set_to_none=True)  # frozen groups too, so nothing accumulates
    state.step += 1


def _prepare_run(out_dir, run_cfg: RunConfig) -> Path:
    from .config import save_config
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(run_cfg, out / "config.yaml")
    return out


# ---------------------------------------------------------------------------
# stage 1: extractor warm start

@torch.no_grad()
def evaluate_extractor(model: NoiseConditionedTTS, utts: list[Utterance]) -> float:
    was = model.training
    model.eval()
    value = float(extractor_loss(model, utts))
    model.train(was)
    return value


def pretrain_extractor(manifest: CorpusManifest, run_cfg: RunConfig, out_dir,
                       steps: int | None = None, resume: str | Path | None = None,
                       stop_after: int | None = None) -> Path:
    """Train only the noise extractor on paired (noisy, noise) data.

    All other parameters stay at their initialization. Writes ``extractor.ckpt`` and
    ``losses.tsv`` into ``out_dir`` and returns the checkpoint path.
    """
    cfg = run_cfg.train
    steps = cfg.extractor_steps if steps is None else steps
    train = [u for u in load_utterances(manifest, "train") if u.condition_class == "paired_noisy"]
    if not train:
        raise ConfigError("extractor pretraining needs paired noisy utterances")
    held = [u for u in load_utterances(manifest, "validation")
            if u.condition_class == "paired_noisy"] or train
    out = _prepare_run(out_dir, run_cfg)

    mcfg = model_config_for(manifest, run_cfg.model)
    model = build_model(mcfg, manifest.frontend(), run_cfg.seed)
    names = model.named_groups()["extractor"]
    opt = make_optimizer(model, names, cfg)
    state = TrainState(model, opt, names, STAGE_EXTRACTOR, run_cfg.seed)
    if resume is not None:
        _resume(state, resume, STAGE_EXTRACTOR)
    losses = LossLog(out / "losses.tsv", keep_until=state.step, stage=STAGE_EXTRACTOR)
    if state.step == 0:
        losses.write(STAGE_EXTRACTOR, 0, "validation",
                     {"extractor": evaluate_extractor(model, held)})
    model.train()
    while state.step < steps:
        if stop_after is not None and state.step >= stop_after:
            break
        rng = _step_rng(run_cfg.seed, STAGE_EXTRACTOR, state.step)
        k = min(cfg.batch_size, len(train))
        utts = [train[i] for i in sorted(rng.choice(len(train), k, replace=False))]
        loss = extractor_loss(model, utts)
        loss.backward()
        _clip_and_step(state, cfg)
        losses.write(STAGE_EXTRACTOR, state.step, "train", {"extractor": loss.item()})
        if state.step % cfg.validate_every == 0 or state.step == steps:
            losses.write(STAGE_EXTRACTOR, state.step, "validation",
                         {"extractor": evaluate_extractor(model, held)})
        if state.step % cfg.checkpoint_every == 0:
            state.save(out / f"extractor_{state.step:06d}.ckpt", run_cfg)
    path = state.save(out / "extractor.ckpt", run_cfg)
    log.info("extractor stage finished at step %d", state.step)
    return path


def _resume(state: TrainState, path, stage: str) -> None:
    tensors, header = ckpt.load_checkpoint(path)
    meta = header.get("meta", {})
    if meta.get("stage") != stage:
        raise CheckpointError(f"{path} is a {meta.get('stage')!r} checkpoint, expected {stage!r}")
    ckpt.load_model_state(state.model, tensors)
    restore_optimizer(state.optimizer, state.model, state.param_names, tensors)
    state.step = int(meta["step"])
    state.best_val = float(meta.get("best_val", math.inf))


# ---------------------------------------------------------------------------
# stage 2: joint training

@torch.no_grad()
def validation_losses(model: NoiseConditionedTTS, utts: list[Utterance], run_cfg: RunConfig,
                      batch_size: int = 16) -> dict[str, float]:
    """Teacher-forced eval-mode loss terms, averaged over utterances."""
    was = model.training
    model.eval()
    fe = model.frontend
    sums: dict[str, float] = {}
    for i in range(0, len(utts), batch_size):
        chunk = utts[i:i + batch_size]
        batch = make_batch(chunk, fe.log_floor)
        out = model(batch, run_cfg.train.lambda_grl, run_cfg.train.use_adversarial_ctc)
        _, terms = total_loss(out, batch, fe, run_cfg.train)
        for k, v in terms.items():
            sums[k] = sums.get(k, 0.0) + float(v) * len(chunk)
    model.train(was)
    return {k: v / len(utts) for k, v in sums.items()}


def check_gradient_routing(model: NoiseConditionedTTS, utt: Utterance, lambda_grl: float,
                           tol: float = 1e-6) -> float:
    """Spot check that the adversarial term reaches the extractor negated and scaled by
    ``lambda_grl``; returns the largest absolute deviation and raises if it exceeds ``tol``."""
    was = model.training
    model.eval()
    fe = model.frontend
    floor, log_range = fe.log_floor, fe.log_ceiling - fe.log_floor
    mel = torch.from_numpy(utt.mel).to(torch.get_default_dtype())
    target = torch.from_numpy(utt.transcript_chars)
    params = [p for _, p in model.extractor.named_parameters()]

    def grads(reverse: bool):
        model.zero_grad(set_to_none=True)
        noise = model.extract(mel)
        if reverse:
            loss = adversarial_ctc_loss(model.ctc_head, noise, target, lambda_grl, floor, log_range)
        else:
            loss = ctc_loss(model.ctc_head((noise - floor) / log_range), target)
        if loss is None or not torch.isfinite(loss):
            return None
        loss.backward()
        return torch.cat([p.grad.flatten() for p in params])

    g_rev, g_plain = grads(True), grads(False)
    model.zero_grad(set_to_none=True)
    model.train(was)
    if g_rev is None or g_plain is None:
        return 0.0
    dev = float((g_rev + lambda_grl * g_plain).abs().max())
    scale = float(g_plain.abs().max()) + 1e-12
    if dev > tol * max(1.0, scale):
        raise NoiseTTSError(f"gradient reversal check failed: deviation {dev:.3g}")
    return dev


def trainable_names(model: NoiseConditionedTTS, cfg: TrainConfig) -> list[str]:
    groups = model.named_groups()
    names = list(groups["backbone"])
    if not cfg.fix_extractor:
        names += groups["extractor"]
    if cfg.use_adversarial_ctc:
        names += groups["ctc_head"]
    return sorted(names)


def joint_train(manifest: CorpusManifest, warmstart: str | Path | None, run_cfg: RunConfig,
                out_dir, steps: int | None = None, cold_start: bool = False,
                resume: str | Path | None = None, stop_after: int | None = None) -> Path:
    """Jointly train backbone and noise-condition module from a warm-started extractor."""
    cfg = run_cfg.train
    steps = cfg.joint_steps if steps is None else steps
    if warmstart is None and not cold_start and resume is None:
        raise ConfigError("joint training needs an extractor checkpoint (or cold_start=True)")
    if warmstart is None and cfg.fix_extractor and resume is None:
        raise ConfigError("fix_extractor requires a warm-started extractor")
    train = load_utterances(manifest, "train")
    val = load_utterances(manifest, "validation") or train
    unpaired = [u for u in train if u.condition_class == "unpaired_noisy"]
    out = _prepare_run(out_dir, run_cfg)

    mcfg = model_config_for(manifest, run_cfg.model)
    model = build_model(mcfg, manifest.frontend(), run_cfg.seed)
    if warmstart is not None:
        tensors, header = ckpt.load_checkpoint(warmstart)
        if not same_architecture(header.get("model_config", {}), dataclasses.asdict(mcfg)):
            raise CheckpointError("warm-start checkpoint was trained with a different model config")
        ckpt.load_model_state(model, tensors)
    names = trainable_names(model, cfg)
    opt = make_optimizer(model, names, cfg)
    state = TrainState(model, opt, names, STAGE_JOINT, run_cfg.seed)
    if resume is not None:
        _resume(state, resume, STAGE_JOINT)
    losses = LossLog(out / "losses.tsv", keep_until=state.step, stage=STAGE_JOINT)

    def set_modes():
        model.train()
        if cfg.fix_extractor:
            model.extractor.eval()  # frozen: keep batch-norm statistics fixed too

    if state.step == 0:
        losses.write(STAGE_JOINT, 0, "validation", validation_losses(model, val, run_cfg))
    set_modes()
    fe = model.frontend
    while state.step < steps:
        if stop_after is not None and state.step >= stop_after:
            break
        rng = _step_rng(run_cfg.seed, STAGE_JOINT, state.step)
        k = min(cfg.batch_size, len(train))
        batch = make_batch([train[i] for i in sorted(rng.choice(len(train), k, replace=False))],
                           fe.log_floor)
        outputs = model(batch, cfg.lambda_grl, cfg.use_adversarial_ctc)
        loss, terms = total_loss(outputs, batch, fe, cfg)
        loss.backward()
        _clip_and_step(state, cfg)
        losses.write(STAGE_JOINT, state.step, "train", {k: v.item() for k, v in terms.items()})
        if state.step % cfg.validate_every == 0 or state.step == steps:
            vals = validation_losses(model, val, run_cfg)
            losses.write(STAGE_JOINT, state.step, "validation", vals)
            if cfg.use_adversarial_ctc and unpaired:
                check_gradient_routing(model, unpaired[0], cfg.lambda_grl)
            set_modes()
            if vals["mel_mae"] < state.best_val:
                state.best_val = vals["mel_mae"]
                state.save(out / "best.ckpt", run_cfg)
        if state.step % cfg.checkpoint_every == 0:
            state.save(out / f"joint_{state.step:06d}.ckpt", run_cfg)
    path = state.save(out / "model.ckpt", run_cfg)
    log.info("joint stage finished at step %d", state.step)
    return path
