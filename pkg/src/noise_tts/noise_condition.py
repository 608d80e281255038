"""Frame-level noise conditioning: UNet noise extractor, noise encoder, adversarial CTC head."""

from __future__ import annotations

import logging

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidInputError
from .primitives import TransformerStack, ctc_loss, gradient_reversal

log = logging.getLogger(__name__)


def _double_conv(c_in, c_out):
    # each 3x3 conv is followed by ReLU, then batch norm
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1), nn.ReLU(), nn.BatchNorm2d(c_out),
        nn.Conv2d(c_out, c_out, 3, padding=1), nn.ReLU(), nn.BatchNorm2d(c_out),
    )


class DownConv(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.pool = nn.MaxPool2d(2)
        self.convs = _double_conv(c_in, c_out)

    def forward(self, x):
        return self.convs(self.pool(x))


class UpConv(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.up = nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"),
                                nn.Conv2d(c_in, c_out, 3, padding=1))
        self.convs = _double_conv(2 * c_out, c_out)

    def forward(self, x, skip):
        return self.convs(torch.cat([self.up(x), skip], dim=1))


class NoiseExtractor(nn.Module):
    """UNet over the (time, mel) plane mapping a noisy log-mel to the noise log-mel.

    Input/output are log-mels; internally values are mapped to [0, 1] with the
    floor/ceiling pair, the time axis is padded to a multiple of ``2**depth`` with the
    floor value and cropped back afterwards.
    """

    def __init__(self, log_floor: float, log_ceiling: float, base_channels=32, depth=4):
        super().__init__()
        self.log_floor = log_floor
        self.log_range = log_ceiling - log_floor
        self.depth = depth
        chans = [base_channels * 2 ** i for i in range(depth + 1)]
        self.inc = _double_conv(1, chans[0])
        self.downs = nn.ModuleList(DownConv(chans[i], chans[i + 1]) for i in range(depth))
        self.ups = nn.ModuleList(UpConv(chans[i + 1], chans[i]) for i in reversed(range(depth)))
        self.out = nn.Conv2d(chans[0], 1, 1)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        squeeze = mel.dim() == 2
        if squeeze:
            mel = mel.unsqueeze(0)
        b, t, m = mel.shape
        if t < 1:
            raise InvalidInputError("extract_noise needs at least one frame")
        mult = 2 ** self.depth
        if m % mult:
            raise InvalidInputError(f"mel bins must be a multiple of {mult}")
        x = (mel - self.log_floor) / self.log_range
        pad = -t % mult
        x = F.pad(x, (0, 0, 0, pad))  # zero == floor after normalization
        x = x.unsqueeze(1)
        skips = [self.inc(x)]
        for down in self.downs:
            skips.append(down(skips[-1]))
        y = skips.pop()
        for up in self.ups:
            y = up(y, skips.pop())
        y = self.out(y).squeeze(1)[:, :t]
        y = self.log_floor + self.log_range * y
        return y.squeeze(0) if squeeze else y


def extract_noise(extractor: NoiseExtractor, noisy_mel: torch.Tensor) -> torch.Tensor:
    return extractor(noisy_mel)


class NoiseEncoder(nn.Module):
    """Two kernel-3 conv1d layers over time plus a per-frame projection to the model width."""

    def __init__(self, n_mels, d_model, log_floor, log_ceiling, kernel=3):
        super().__init__()
        self.log_floor = log_floor
        self.log_range = log_ceiling - log_floor
        self.conv1 = nn.Conv1d(n_mels, d_model, kernel, padding=kernel // 2)
        self.conv2 = nn.Conv1d(d_model, d_model, kernel, padding=kernel // 2)
        self.proj = nn.Linear(d_model, d_model)

    def frame_condition(self, noise_mel, mask):
        m = mask.unsqueeze(1).to(noise_mel.dtype)
        x = ((noise_mel - self.log_floor) / self.log_range).transpose(1, 2) * m
        x = torch.relu(self.conv1(x)) * m
        x = torch.relu(self.conv2(x)) * m
        return self.proj(x.transpose(1, 2)) * mask.unsqueeze(-1).to(x.dtype)

    def forward(self, noise_mel: torch.Tensor, mask: torch.Tensor | None = None,
                granularity: str = "frame") -> torch.Tensor:
        squeeze = noise_mel.dim() == 2
        if squeeze:
            noise_mel = noise_mel.unsqueeze(0)
        if mask is None:
            mask = torch.ones(noise_mel.shape[:2], dtype=torch.bool, device=noise_mel.device)
        if granularity == "none":
            cond = noise_mel.new_zeros(*noise_mel.shape[:2], self.proj.out_features)
        else:
            cond = self.frame_condition(noise_mel, mask)
            if granularity == "utterance":
                mf = mask.unsqueeze(-1).to(cond.dtype)
                mean = (cond * mf).sum(1, keepdim=True) / mf.sum(1, keepdim=True)
                cond = mean.expand_as(cond) * mf
            elif granularity != "frame":
                raise InvalidInputError(f"unknown granularity {granularity!r}")
        return cond.squeeze(0) if squeeze else cond


def encode_noise(encoder: NoiseEncoder, noise_mel: torch.Tensor, granularity: str = "frame",
                 target_frames: int | None = None) -> torch.Tensor:
    if target_frames is not None and noise_mel.shape[-2] != target_frames:
        raise InvalidInputError(
            f"noise mel has {noise_mel.shape[-2]} frames, target has {target_frames}")
    return encoder(noise_mel, granularity=granularity)


class CTCHead(nn.Module):
    """Transformer encoder + linear/log-softmax over characters (index 0 is the blank)."""

    def __init__(self, n_mels, d_model, n_chars, n_layers=2, n_heads=2, ffn_dim=1024, dropout=0.1):
        super().__init__()
        self.inp = nn.Linear(n_mels, d_model)
        self.stack = TransformerStack(n_layers, d_model, n_heads, ffn_dim, dropout)
        self.out = nn.Linear(d_model, n_chars)

    def forward(self, noise_mel: torch.Tensor) -> torch.Tensor:
        x = self.inp(noise_mel.unsqueeze(0))
        x = self.stack(x, torch.ones(x.shape[:2], dtype=torch.bool, device=x.device))
        return torch.log_softmax(self.out(x), dim=-1).squeeze(0)


def adversarial_ctc_loss(head: CTCHead, extracted_noise_mel: torch.Tensor, transcript,
                         lambda_grl: float = 1.0, log_floor: float = 0.0,
                         log_range: float = 1.0) -> torch.Tensor | None:
    """CTC loss of the head on gradient-reversed extracted noise.

    Returns None when the transcript cannot be aligned within the available frames.
    """
    x = gradient_reversal(extracted_noise_mel, lambda_grl)
    x = (x - log_floor) / log_range
    loss = ctc_loss(head(x), transcript)
    if torch.isinf(loss):
        log.info("skipping adversarial CTC: %d chars do not fit in %d frames",
                 len(transcript), extracted_noise_mel.shape[0])
        return None
    return loss
