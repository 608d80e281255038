"""The full noise-conditioned acoustic model.

Module order follows the data path: encoder -> length regulator -> + noise condition
-> pitch predictor / pitch embedding -> decoder. The noise condition is added *before*
the pitch predictor so pitch prediction can see the noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .backbone import (MelDecoder, PhonemeEncoder, PitchQuantizer, VariancePredictor,
                       durations_from_log, length_regulate, target_to_pitch)
from .config import FrontendConfig, ModelConfig
from .errors import InvalidInputError
from .noise_condition import CTCHead, NoiseEncoder, NoiseExtractor, adversarial_ctc_loss

CLEAN, PAIRED, UNPAIRED = 0, 1, 2
CONDITION_CLASSES = ("clean", "paired_noisy", "unpaired_noisy")


@dataclass
class ForwardOutputs:
    mel_pred: torch.Tensor
    log_dur_pred: torch.Tensor
    pitch_pred: torch.Tensor
    noise_input: torch.Tensor
    mel_mask: torch.Tensor
    phoneme_mask: torch.Tensor
    # per-utterance tensors keyed by batch index
    extracted: dict[int, torch.Tensor] = field(default_factory=dict)
    ctc: dict[int, torch.Tensor] = field(default_factory=dict)


class NoiseConditionedTTS(nn.Module):
    def __init__(self, cfg: ModelConfig, frontend: FrontendConfig):
        super().__init__()
        self.cfg = cfg
        self.frontend = frontend
        d = cfg.d_model
        self.encoder = PhonemeEncoder(cfg.n_phonemes, d, cfg.n_layers, cfg.n_heads,
                                      cfg.ffn_dim, cfg.dropout)
        self.speaker_embedding = nn.Embedding(cfg.n_speakers, d)
        self.duration_predictor = VariancePredictor(d, cfg.predictor_channels,
                                                    cfg.predictor_kernel, cfg.dropout)
        self.pitch_predictor = VariancePredictor(d, cfg.predictor_channels,
                                                 cfg.predictor_kernel, cfg.dropout)
        self.pitch_quantizer = PitchQuantizer(cfg.pitch_bins, frontend.f0_min, frontend.f0_max)
        self.pitch_embedding = nn.Embedding(cfg.pitch_bins + 1, d)
        self.decoder = MelDecoder(d, cfg.n_mels, cfg.n_layers, cfg.n_heads, cfg.ffn_dim,
                                  cfg.dropout)
        self.extractor = NoiseExtractor(frontend.log_floor, frontend.log_ceiling,
                                        cfg.unet_base_channels, cfg.unet_depth)
        self.noise_encoder = NoiseEncoder(cfg.n_mels, d, frontend.log_floor, frontend.log_ceiling)
        self.ctc_head = CTCHead(cfg.n_mels, d, cfg.n_chars, cfg.ctc_layers, cfg.n_heads,
                                cfg.ffn_dim, cfg.dropout)

    # parameter groups -------------------------------------------------------
    def named_groups(self) -> dict[str, list[str]]:
        groups: dict[str, list[str]] = {"extractor": [], "ctc_head": [], "backbone": []}
        for name, _ in self.named_parameters():
            if name.startswith("extractor."):
                groups["extractor"].append(name)
            elif name.startswith("ctc_head."):
                groups["ctc_head"].append(name)
            else:
                groups["backbone"].append(name)
        return groups

    # pieces -----------------------------------------------------------------
    def encode(self, phonemes, phoneme_mask, speakers):
        h = self.encoder(phonemes, phoneme_mask)
        return h + self.speaker_embedding(speakers).unsqueeze(1) * phoneme_mask.unsqueeze(-1)

    def condition(self, h, noise_mel, mel_mask, granularity=None):
        granularity = granularity or self.cfg.granularity
        return h + self.noise_encoder(noise_mel, mel_mask, granularity)

    def add_pitch(self, h, f0, mel_mask):
        emb = self.pitch_embedding(self.pitch_quantizer(f0).to(h.device))
        return h + emb * mel_mask.unsqueeze(-1).to(h.dtype)

    def silence(self, batch: int, frames: int, dtype=None) -> torch.Tensor:
        dtype = dtype or torch.get_default_dtype()
        return torch.full((batch, frames, self.cfg.n_mels), self.frontend.log_floor, dtype=dtype)

    def extract(self, mel: torch.Tensor) -> torch.Tensor:
        return self.extractor(mel)

    # training forward -------------------------------------------------------
    def forward(self, batch, lambda_grl: float = 1.0, use_adversarial_ctc: bool = True,
                granularity: str | None = None) -> ForwardOutputs:
        """Teacher-forced pass over a padded batch (see ``corpus.Batch``)."""
        h = self.encode(batch.phonemes, batch.phoneme_mask, batch.speakers)
        log_dur_pred = self.duration_predictor(h, batch.phoneme_mask)
        h, mel_mask = length_regulate(h, batch.durations)
        if h.shape[1] != batch.mel.shape[1]:
            raise InvalidInputError("durations do not sum to the mel length")

        # noise-encoder input routing: clean -> silence, paired -> ground-truth noise,
        # unpaired -> extractor output
        noise_input = self.silence(*batch.mel.shape[:2], dtype=batch.mel.dtype)
        extracted, ctc = {}, {}
        floor = self.frontend.log_floor
        log_range = self.frontend.log_ceiling - floor
        for b, cls in enumerate(batch.classes.tolist()):
            t = int(batch.mel_lengths[b])
            if cls == PAIRED:
                noise_input[b, :t] = batch.noise_mel[b, :t]
                extracted[b] = self.extractor(batch.mel[b, :t])
            elif cls == UNPAIRED:
                ext = self.extractor(batch.mel[b, :t])
                extracted[b] = ext
                noise_input[b, :t] = ext
                if use_adversarial_ctc:
                    loss = adversarial_ctc_loss(self.ctc_head, ext, batch.transcripts[b],
                                                lambda_grl, floor, log_range)
                    if loss is not None:
                        ctc[b] = loss

        h = self.condition(h, noise_input, mel_mask, granularity)
        pitch_pred = self.pitch_predictor(h, mel_mask)
        h = self.add_pitch(h, batch.pitch, mel_mask)
        mel_pred = self.decoder(h, mel_mask)
        return ForwardOutputs(mel_pred, log_dur_pred, pitch_pred, noise_input, mel_mask,
                              batch.phoneme_mask, extracted, ctc)

    # inference --------------------------------------------------------------
    @torch.no_grad()
    def infer(self, phonemes, speaker: int = 0, durations=None, noise_mel=None,
              granularity: str | None = None) -> dict:
        """Synthesize one utterance; conditions on silence unless ``noise_mel`` is given."""
        phonemes = torch.as_tensor(phonemes, dtype=torch.long).reshape(1, -1)
        if phonemes.numel() == 0:
            raise InvalidInputError("empty phoneme sequence")
        pmask = torch.ones_like(phonemes, dtype=torch.bool)
        h = self.encode(phonemes, pmask, torch.tensor([speaker]))
        if durations is None:
            durations = durations_from_log(self.duration_predictor(h, pmask))[0]
        durations = torch.as_tensor(durations, dtype=torch.long)
        if durations.numel() != phonemes.numel():
            raise InvalidInputError("one duration per phoneme is required")
        h, mel_mask = length_regulate(h, durations.reshape(1, -1))
        frames = h.shape[1]
        if noise_mel is None:
            noise_mel = self.silence(1, frames)
        else:
            noise_mel = torch.as_tensor(noise_mel, dtype=h.dtype).reshape(1, frames, -1)
        h = self.condition(h, noise_mel, mel_mask, granularity)
        f0 = target_to_pitch(self.pitch_predictor(h, mel_mask))
        h = self.add_pitch(h, f0, mel_mask)
        mel = self.decoder(h, mel_mask)
        return {"mel": mel[0], "durations": durations, "noise_input": noise_mel[0], "f0": f0[0]}
