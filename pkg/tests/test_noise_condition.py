import math

import pytest
import torch

from noise_tts.audio import silence_mel
from noise_tts.config import FrontendConfig
from noise_tts.errors import InvalidInputError
from noise_tts.noise_condition import (CTCHead, NoiseEncoder, NoiseExtractor,
                                       adversarial_ctc_loss, encode_noise, extract_noise)
from noise_tts.primitives import ctc_loss

FE = FrontendConfig()
FLOOR, CEIL = FE.log_floor, FE.log_ceiling


@pytest.mark.parametrize("t", [1, 7, 15, 16, 17, 100])
def test_unet_preserves_length(t):
    ext = NoiseExtractor(FLOOR, CEIL, base_channels=4).eval()
    assert extract_noise(ext, torch.randn(t, 80)).shape == (t, 80)
    assert ext(torch.randn(2, t, 80)).shape == (2, t, 80)


def test_unet_finite_on_floor_input():
    ext = NoiseExtractor(FLOOR, CEIL, base_channels=4).eval()
    out = ext(torch.from_numpy(silence_mel(20, FE)).float())
    assert torch.isfinite(out).all()


def test_unet_rejects_bad_mel_count():
    with pytest.raises(InvalidInputError):
        NoiseExtractor(FLOOR, CEIL, base_channels=4)(torch.randn(5, 81))


def test_unet_padding_does_not_leak_into_valid_frames():
    # the batch path and the single-utterance path agree frame for frame
    ext = NoiseExtractor(FLOOR, CEIL, base_channels=4).eval()
    x = torch.randn(23, 80)
    assert torch.allclose(ext(x), ext(x.unsqueeze(0))[0])


def test_noise_encoder_shapes_and_granularity():
    enc = NoiseEncoder(80, 256, FLOOR, CEIL).eval()
    mel = torch.randn(12, 80)
    frame = encode_noise(enc, mel, "frame")
    assert frame.shape == (12, 256)
    utt = encode_noise(enc, mel, "utterance")
    assert torch.allclose(utt, frame.mean(0, keepdim=True).expand_as(frame), atol=1e-6)
    assert torch.all(encode_noise(enc, mel, "none") == 0)
    with pytest.raises(InvalidInputError):
        encode_noise(enc, mel, "sentence")
    with pytest.raises(InvalidInputError):
        encode_noise(enc, mel, "frame", target_frames=13)


def test_noise_encoder_silence_is_deterministic():
    enc = NoiseEncoder(80, 64, FLOOR, CEIL).eval()
    a = enc(torch.from_numpy(silence_mel(9, FE)).float())
    b = enc(torch.from_numpy(silence_mel(9, FE)).float())
    assert torch.equal(a, b)


def test_noise_encoder_mask_excludes_padding_from_utterance_mean():
    enc = NoiseEncoder(80, 32, FLOOR, CEIL).eval()
    mel = torch.randn(1, 10, 80)
    mask = torch.zeros(1, 10, dtype=torch.bool)
    mask[0, :6] = True
    padded = enc(mel, mask, "utterance")[0, :6]
    alone = enc(mel[:, :6], None, "utterance")[0]
    assert torch.allclose(padded, alone, atol=1e-5)


def _setup(lam=1.0):
    torch.manual_seed(1)
    ext = NoiseExtractor(FLOOR, CEIL, base_channels=4).double().eval()
    head = CTCHead(80, 32, 29, n_layers=1, ffn_dim=64, dropout=0.0).double().eval()
    mel = torch.randn(16, 80, dtype=torch.float64)
    return ext, head, mel, torch.tensor([3, 1, 20])


def test_adversarial_value_equals_plain_ctc():
    ext, head, mel, target = _setup()
    noise = ext(mel)
    adv = adversarial_ctc_loss(head, noise, target, 1.0, FLOOR, CEIL - FLOOR)
    plain = ctc_loss(head((noise - FLOOR) / (CEIL - FLOOR)), target)
    assert adv.item() == pytest.approx(plain.item(), abs=1e-12)


def _extractor_grad(ext, head, mel, target, lam, reverse=True):
    ext.zero_grad()
    head.zero_grad()
    noise = ext(mel)
    if reverse:
        loss = adversarial_ctc_loss(head, noise, target, lam, FLOOR, CEIL - FLOOR)
    else:
        loss = ctc_loss(head((noise - FLOOR) / (CEIL - FLOOR)), target)
    loss.backward()
    return (torch.cat([p.grad.flatten() for p in ext.parameters()]),
            torch.cat([p.grad.flatten() for p in head.parameters()]))


def test_adversarial_gradient_is_negated_for_extractor():
    ext, head, mel, target = _setup()
    g_rev, h_rev = _extractor_grad(ext, head, mel, target, 1.0)
    g_plain, h_plain = _extractor_grad(ext, head, mel, target, 1.0, reverse=False)
    assert torch.allclose(g_rev, -g_plain, rtol=0, atol=1e-10)
    assert torch.allclose(h_rev, h_plain, rtol=0, atol=1e-12)


def test_adversarial_zero_lambda_only_trains_head():
    ext, head, mel, target = _setup()
    g, h = _extractor_grad(ext, head, mel, target, 0.0)
    assert torch.count_nonzero(g) == 0
    assert torch.count_nonzero(h) > 0


def test_adversarial_unreachable_returns_none():
    ext, head, mel, _ = _setup()
    assert adversarial_ctc_loss(head, ext(mel[:2]), torch.tensor([1, 2, 3])) is None


def test_ctc_head_log_softmax():
    head = CTCHead(80, 32, 29, n_layers=1, ffn_dim=64).eval()
    out = head(torch.rand(7, 80))
    assert out.shape == (7, 29)
    assert torch.allclose(out.exp().sum(-1), torch.ones(7), atol=1e-5)
    assert math.isfinite(out.sum().item())
