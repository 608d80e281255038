"""Non-autoregressive acoustic backbone: phoneme encoder, variance predictors, length
regulator, pitch embedding and mel decoder."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .errors import InvalidInputError
from .primitives import TransformerStack


class PhonemeEncoder(nn.Module):
    def __init__(self, n_phonemes, d_model, n_layers, n_heads, ffn_dim, dropout):
        super().__init__()
        self.n_phonemes = n_phonemes
        self.embedding = nn.Embedding(n_phonemes, d_model)
        self.stack = TransformerStack(n_layers, d_model, n_heads, ffn_dim, dropout)

    def forward(self, phonemes: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if phonemes.numel() and (phonemes.min() < 0 or phonemes.max() >= self.n_phonemes):
            raise InvalidInputError("phoneme id outside the vocabulary")
        x = self.embedding(phonemes) * mask.unsqueeze(-1)
        return self.stack(x, mask)


class VariancePredictor(nn.Module):
    """Two conv1d/ReLU/LayerNorm/dropout layers and a linear head; one scalar per position."""

    def __init__(self, d_model, channels=256, kernel=3, dropout=0.1):
        super().__init__()
        self.convs = nn.ModuleList([
            nn.Conv1d(d_model, channels, kernel, padding=kernel // 2),
            nn.Conv1d(channels, channels, kernel, padding=kernel // 2),
        ])
        self.norms = nn.ModuleList([nn.LayerNorm(channels), nn.LayerNorm(channels)])
        self.dropout = nn.Dropout(dropout)
        self.head = nn.Linear(channels, 1)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        m = mask.unsqueeze(-1).to(x.dtype)
        x = x * m
        for conv, norm in zip(self.convs, self.norms):
            x = conv(x.transpose(1, 2)).transpose(1, 2)
            x = self.dropout(norm(torch.relu(x))) * m
        return self.head(x).squeeze(-1) * mask.to(x.dtype)


def durations_from_log(pred: torch.Tensor) -> torch.Tensor:
    """Inference rounding of log(d + 1) predictions; never below one frame."""
    return torch.clamp(torch.round(torch.exp(pred) - 1), min=1).long()


def length_regulate(h: torch.Tensor, durations: torch.Tensor):
    """Repeat row i of ``h`` ``durations[i]`` times.

    Accepts (N, d) with (N,) durations, or a padded batch (B, N, d) with (B, N).
    Returns the expanded sequence, plus a frame mask for batched input.
    """
    durations = torch.as_tensor(durations, dtype=torch.long, device=h.device)
    if h.dim() == 2:
        if durations.shape != h.shape[:1]:
            raise InvalidInputError("one duration per row is required")
        if torch.any(durations < 0) or int(durations.sum()) < 1:
            raise InvalidInputError("durations must be non-negative with a positive sum")
        return torch.repeat_interleave(h, durations, dim=0)
    if durations.shape != h.shape[:2]:
        raise InvalidInputError("durations must match the (B, N) prefix of h")
    rows = [length_regulate(h[b], durations[b]) for b in range(h.shape[0])]
    lengths = torch.tensor([r.shape[0] for r in rows], device=h.device)
    out = nn.utils.rnn.pad_sequence(rows, batch_first=True)
    mask = torch.arange(out.shape[1], device=h.device)[None, :] < lengths[:, None]
    return out, mask


class PitchQuantizer:
    """Log-spaced F0 bins over [f_min, f_max] plus one reserved unvoiced bin (the last index)."""

    def __init__(self, n_bins=256, f_min=50.0, f_max=800.0):
        self.n_bins = n_bins
        self.f_min = f_min
        self.edges = np.geomspace(f_min, f_max, n_bins + 1)
        self.unvoiced = n_bins
        self._inner = torch.tensor(self.edges[1:-1])

    @property
    def centers(self) -> np.ndarray:
        return np.sqrt(self.edges[:-1] * self.edges[1:])

    def __call__(self, f0: torch.Tensor) -> torch.Tensor:
        f0 = torch.as_tensor(f0)
        idx = torch.bucketize(f0.double(), self._inner, right=True)
        # anything below half the voiced floor counts as unvoiced
        return torch.where(f0 < 0.5 * self.f_min, torch.full_like(idx, self.unvoiced), idx)


def pitch_to_target(f0: torch.Tensor) -> torch.Tensor:
    """Regression target for the pitch predictor: log(1 + F0), 0 when unvoiced."""
    return torch.log1p(f0)


def target_to_pitch(target: torch.Tensor) -> torch.Tensor:
    return torch.expm1(target).clamp_min(0.0)


class MelDecoder(nn.Module):
    def __init__(self, d_model, n_mels, n_layers, n_heads, ffn_dim, dropout):
        super().__init__()
        self.stack = TransformerStack(n_layers, d_model, n_heads, ffn_dim, dropout)
        self.proj = nn.Linear(d_model, n_mels)

    def forward(self, h: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self.proj(self.stack(h, mask)) * mask.unsqueeze(-1).to(h.dtype)


def log_duration_target(durations: torch.Tensor) -> torch.Tensor:
    return torch.log(durations.to(torch.get_default_dtype()) + 1.0)

