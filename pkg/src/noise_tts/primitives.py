"""Neural building blocks: gradient reversal, CTC, MSSIM, masked losses, transformer block."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidInputError

LOG_ZERO = -1e30


class GradientReversal(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lambda_grl):
        ctx.lambda_grl = lambda_grl
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.lambda_grl, None


def gradient_reversal(x: torch.Tensor, lambda_grl: float = 1.0) -> torch.Tensor:
    """Identity forward; multiplies the incoming gradient by ``-lambda_grl`` on the way back."""
    if lambda_grl < 0:
        raise InvalidInputError("lambda_grl must be >= 0")
    return GradientReversal.apply(x, float(lambda_grl))


class GradReverse(nn.Module):
    def __init__(self, lambda_grl: float = 1.0):
        super().__init__()
        self.lambda_grl = lambda_grl

    def forward(self, x):
        return gradient_reversal(x, self.lambda_grl)


# ---------------------------------------------------------------------------
# CTC

def ctc_loss(log_probs: torch.Tensor, target, blank: int = 0) -> torch.Tensor:
    """Negative log-probability of ``target`` under ``log_probs`` (T, V+1).

    Forward recursion over the blank-interleaved label sequence, entirely in log space
    with ``LOG_ZERO`` standing in for log(0). Returns ``+inf`` (without a graph) when
    the target cannot be emitted in T frames.
    """
    if log_probs.dim() != 2:
        raise InvalidInputError("log_probs must be (T, V+1)")
    target = torch.as_tensor(target, dtype=torch.long).reshape(-1)
    n_frames = log_probs.shape[0]
    n_labels = target.numel()
    repeats = int((target[1:] == target[:-1]).sum()) if n_labels > 1 else 0
    if n_frames < n_labels + repeats:
        return log_probs.new_tensor(math.inf)

    ext = torch.full((2 * n_labels + 1,), blank, dtype=torch.long)
    ext[1::2] = target
    n_states = ext.numel()
    # transitions s-2 -> s allowed for labels that differ from the previous label
    skip = torch.zeros(n_states, dtype=torch.bool)
    if n_states > 2:
        skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    emit = log_probs[:, ext]  # (T, S)
    log_zero = log_probs.new_full((n_states,), LOG_ZERO)
    alpha = log_zero.clone()
    alpha[0] = emit[0, 0]
    if n_states > 1:
        alpha[1] = emit[0, 1]
    pad1 = log_probs.new_full((1,), LOG_ZERO)
    pad2 = log_probs.new_full((2,), LOG_ZERO)
    for t in range(1, n_frames):
        prev1 = torch.cat([pad1, alpha[:-1]])
        prev2 = torch.where(skip, torch.cat([pad2, alpha[:-2]])[:n_states], log_zero)
        alpha = torch.logsumexp(torch.stack([alpha, prev1, prev2]), dim=0) + emit[t]
    final = alpha[-2:] if n_states > 1 else alpha[-1:]
    total = torch.logsumexp(final, dim=0)
    if total.item() < LOG_ZERO / 2:
        return log_probs.new_tensor(math.inf)
    return -total


# ---------------------------------------------------------------------------
# masked reductions

def _expand_mask(mask: torch.Tensor | None, like: torch.Tensor) -> torch.Tensor:
    if mask is None:
        return torch.ones_like(like)
    mask = mask.to(like.dtype)
    while mask.dim() < like.dim():
        mask = mask.unsqueeze(-1)
    return mask.expand_as(like)


def masked_mean(x: torch.Tensor, mask: torch.Tensor | None = None, per_item: bool = False):
    """Mean of ``x`` over positions where ``mask`` is true.

    ``mask`` may have fewer trailing dims than ``x`` (e.g. (B, T) for (B, T, M)).
    With ``per_item`` the mean is taken separately for each leading index.
    """
    m = _expand_mask(mask, x)
    if per_item:
        dims = tuple(range(1, x.dim()))
        count = m.sum(dim=dims)
        if torch.any(count == 0):
            raise InvalidInputError("empty mask for at least one item")
        return (x * m).sum(dim=dims) / count
    count = m.sum()
    if count == 0:
        raise InvalidInputError("empty mask")
    return (x * m).sum() / count


def mae(pred, target, mask=None, per_item=False):
    return masked_mean((pred - target).abs(), mask, per_item)


def mse(pred, target, mask=None, per_item=False):
    return masked_mean((pred - target) ** 2, mask, per_item)


# ---------------------------------------------------------------------------
# SSIM

def gaussian_window(size: int = 11, sigma: float = 1.5, dtype=torch.float32) -> torch.Tensor:
    x = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter(x: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    # separable 2-D Gaussian with zero padding; x is (B, 1, H, W)
    k = g.numel()
    x = F.conv2d(x, g.view(1, 1, k, 1), padding=(k // 2, 0))
    return F.conv2d(x, g.view(1, 1, 1, k), padding=(0, k // 2))


def ssim_map(x: torch.Tensor, y: torch.Tensor, mask: torch.Tensor | None = None,
             window: int = 11, sigma: float = 1.5, data_range: float = 1.0) -> torch.Tensor:
    """Local SSIM of (B, H, W) images; returns (B, H, W).

    Local statistics use mask-normalized Gaussian filtering, so rows outside ``mask``
    (B, H) never enter the statistics of valid rows and image borders are not biased
    toward zero.
    """
    if x.shape != y.shape:
        raise InvalidInputError(f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    if x.dim() == 2:
        x, y = x.unsqueeze(0), y.unsqueeze(0)
        mask = None if mask is None else mask.unsqueeze(0)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    g = gaussian_window(window, sigma, x.dtype).to(x.device)
    m = _expand_mask(mask, x).unsqueeze(1)
    x, y = x.unsqueeze(1) * m, y.unsqueeze(1) * m
    norm = _filter(m, g).clamp_min(1e-12)
    mu_x = _filter(x, g) / norm
    mu_y = _filter(y, g) / norm
    var_x = (_filter(x * x, g) / norm - mu_x ** 2).clamp_min(0.0)
    var_y = (_filter(y * y, g) / norm - mu_y ** 2).clamp_min(0.0)
    cov = _filter(x * y, g) / norm - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return (num / den).squeeze(1)


def mssim_loss(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor | None = None,
               per_item: bool = False) -> torch.Tensor:
    """``1 - mean SSIM`` over valid frames; inputs already normalized to [0, 1]."""
    s = ssim_map(pred, target, mask)
    if pred.dim() == 2:
        mask = None if mask is None else mask.unsqueeze(0)
    value = 1.0 - masked_mean(s, mask, per_item=True)
    return value if per_item else value.mean()


# ---------------------------------------------------------------------------
# transformer

def sinusoid_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    idx = torch.arange(0, dim, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, idx / dim)
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return pe.to(dtype)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float = 0.1):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)
        self.last_attention: torch.Tensor | None = None

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        b, t, d = x.shape
        q, k, v = self.qkv(x).view(b, t, 3, self.n_heads, self.d_head).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        if mask is not None:
            scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        self.last_attention = attn.detach()
        ctx = self.dropout(attn) @ v
        return self.out(ctx.transpose(1, 2).reshape(b, t, d))


class TransformerBlock(nn.Module):
    """Post-norm self-attention + position-wise feed-forward block (FastSpeech layout)."""

    def __init__(self, d_model: int = 256, n_heads: int = 2, ffn_dim: int = 1024,
                 dropout: float = 0.1):
        super().__init__()
        self.attn = MultiHeadAttention(d_model, n_heads, dropout)
        self.norm1 = nn.LayerNorm(d_model)
        self.ffn = nn.Sequential(nn.Linear(d_model, ffn_dim), nn.ReLU(),
                                 nn.Dropout(dropout), nn.Linear(ffn_dim, d_model))
        self.norm2 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.attn(x, mask)))
        x = self.norm2(x + self.dropout(self.ffn(x)))
        if mask is not None:
            x = x * mask.unsqueeze(-1).to(x.dtype)
        return x


class TransformerStack(nn.Module):
    def __init__(self, n_layers, d_model, n_heads, ffn_dim, dropout):
        super().__init__()
        self.layers = nn.ModuleList(
            TransformerBlock(d_model, n_heads, ffn_dim, dropout) for _ in range(n_layers))

    def forward(self, x, mask=None):
        pe = sinusoid_positions(x.shape[1], x.shape[2], x.dtype).to(x.device)
        x = x + pe.unsqueeze(0)
        for layer in self.layers:
            x = layer(x, mask)
        return x
