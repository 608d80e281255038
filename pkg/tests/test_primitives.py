import itertools
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from noise_tts.errors import InvalidInputError
from noise_tts.primitives import (MultiHeadAttention, TransformerBlock, ctc_loss,
                                  gradient_reversal, mae, masked_mean, mse, mssim_loss, ssim_map)


def brute_force_ctc(log_probs: np.ndarray, target: list[int], blank: int = 0) -> float:
    """-log sum over every frame labelling that collapses to ``target``."""
    t, v = log_probs.shape
    total = 0.0
    for path in itertools.product(range(v), repeat=t):
        collapsed, prev = [], None
        for s in path:
            if s != prev and s != blank:
                collapsed.append(s)
            prev = s
        if collapsed == list(target):
            total += math.exp(sum(log_probs[i, s] for i, s in enumerate(path)))
    return -math.log(total) if total > 0 else math.inf


def random_case(rng):
    t = int(rng.integers(1, 7))
    v = int(rng.integers(2, 5))  # including blank
    n = int(rng.integers(0, 4))
    target = rng.integers(1, v, size=n).tolist()
    logits = torch.from_numpy(rng.normal(size=(t, v)) * 2)
    return torch.log_softmax(logits, dim=-1), target


# -- CTC ---------------------------------------------------------------------

def test_ctc_single_frame_single_label():
    lp = torch.log(torch.full((1, 2), 0.5, dtype=torch.float64))
    assert ctc_loss(lp, [1]).item() == pytest.approx(math.log(2), abs=1e-12)


def test_ctc_two_frames_three_paths():
    lp = torch.log(torch.full((2, 2), 0.5, dtype=torch.float64))
    assert ctc_loss(lp, [1]).item() == pytest.approx(-math.log(0.75), abs=1e-12)


def test_ctc_empty_target_is_all_blank_path():
    lp = torch.log(torch.full((2, 2), 0.5, dtype=torch.float64))
    assert ctc_loss(lp, []).item() == pytest.approx(math.log(4), abs=1e-12)


def test_ctc_matches_brute_force_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(60):
        lp, target = random_case(rng)
        expected = brute_force_ctc(lp.numpy(), target)
        got = ctc_loss(lp, target).item()
        if math.isinf(expected):
            assert math.isinf(got)
        else:
            assert got == pytest.approx(expected, abs=1e-9)


def test_ctc_matches_torch_builtin():
    rng = np.random.default_rng(5)
    for _ in range(40):
        t = int(rng.integers(4, 20))
        v = int(rng.integers(3, 8))
        n = int(rng.integers(1, max(2, t // 2)))
        target = rng.integers(1, v, size=n).tolist()
        lp = torch.log_softmax(torch.from_numpy(rng.normal(size=(t, v))), -1)
        ref = F.ctc_loss(lp.unsqueeze(1), torch.tensor([target]), torch.tensor([t]),
                         torch.tensor([n]), reduction="sum", zero_infinity=False)
        assert ctc_loss(lp, target).item() == pytest.approx(ref.item(), rel=1e-9, abs=1e-9)


def test_ctc_unreachable_target_is_infinite():
    lp = torch.log_softmax(torch.randn(2, 3, dtype=torch.float64), -1)
    assert math.isinf(ctc_loss(lp, [1, 1]).item())  # repeat needs a blank in between
    assert math.isinf(ctc_loss(lp, [1, 2, 1]).item())


def test_ctc_gradcheck():
    logits = torch.randn(5, 4, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda x: ctc_loss(torch.log_softmax(x, -1), [1, 3, 3]),
                                    (logits,))


def test_ctc_rejects_wrong_rank():
    with pytest.raises(InvalidInputError):
        ctc_loss(torch.zeros(2, 3, 4), [1])


# -- gradient reversal -------------------------------------------------------

@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8),
       st.floats(0, 4))
@settings(max_examples=50, deadline=None)
def test_grl_forward_is_identity_and_backward_scales(values, lam):
    x = torch.tensor(values, dtype=torch.float64, requires_grad=True)
    y = gradient_reversal(x, lam)
    assert torch.equal(y, x)
    (y.sin() * 3).sum().backward()
    expected = -lam * 3 * torch.cos(x.detach())
    assert torch.allclose(x.grad, expected, rtol=0, atol=1e-12)


def test_grl_zero_lambda_blocks_gradient():
    x = torch.randn(4, dtype=torch.float64, requires_grad=True)
    (gradient_reversal(x, 0.0) ** 2).sum().backward()
    assert torch.count_nonzero(x.grad) == 0


def test_grl_finite_difference():
    # the reversed gradient is the negated finite-difference slope of the identity path
    f = lambda z: torch.tanh(z) * z ** 2  # noqa: E731
    x = torch.tensor(0.7, dtype=torch.float64, requires_grad=True)
    f(gradient_reversal(x, 1.0)).backward()
    h = 1e-6
    with torch.no_grad():
        fd = (f(x + h) - f(x - h)) / (2 * h)
    assert x.grad.item() == pytest.approx(-fd.item(), rel=1e-4)


def test_grl_rejects_negative_lambda():
    with pytest.raises(InvalidInputError):
        gradient_reversal(torch.ones(1), -1.0)


# -- masked reductions -------------------------------------------------------

def test_mae_mse_constant_offset():
    a = torch.randn(3, 7, 5)
    assert mae(a + 2, a).item() == pytest.approx(2.0)
    assert mse(a + 2, a).item() == pytest.approx(4.0)
    assert mae(a, a).item() == 0.0


def test_masked_cells_are_ignored():
    a, b = torch.randn(2, 6, 4), torch.randn(2, 6, 4)
    mask = torch.tensor([[1, 1, 1, 0, 0, 0], [1, 1, 1, 1, 1, 0]], dtype=torch.bool)
    ref = mae(a, b, mask)
    a2 = a.clone()
    a2[~mask] = 1e6
    assert mae(a2, b, mask).item() == pytest.approx(ref.item())
    per = mae(a, b, mask, per_item=True)
    assert per[0].item() == pytest.approx((a[0, :3] - b[0, :3]).abs().mean().item(), rel=1e-6)


def test_masked_mean_empty_mask_raises():
    with pytest.raises(InvalidInputError):
        masked_mean(torch.ones(2, 3), torch.zeros(2, 3, dtype=torch.bool))


# -- SSIM ----------------------------------------------------------------------

def test_mssim_identical_is_zero():
    x = torch.rand(40, 80, dtype=torch.float64)
    assert abs(mssim_loss(x, x).item()) <= 1e-6


@pytest.mark.parametrize("c1,c2", [(0.0, 0.0), (0.0, 1.0), (0.3, 0.7), (0.9, 0.2)])
def test_ssim_constant_closed_form(c1, c2):
    x = torch.full((20, 24), c1, dtype=torch.float64)
    y = torch.full((20, 24), c2, dtype=torch.float64)
    C1 = 0.01 ** 2
    expected = (2 * c1 * c2 + C1) / (c1 ** 2 + c2 ** 2 + C1)
    s = ssim_map(x, y)
    assert torch.allclose(s, torch.full_like(s, expected), atol=1e-6)
    assert mssim_loss(x, y).item() == pytest.approx(1 - expected, abs=1e-6)


def test_mssim_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = torch.from_numpy(rng.random((30, 16)))
        y = torch.from_numpy(rng.random((30, 16)))
        a, b = mssim_loss(x, y).item(), mssim_loss(y, x).item()
        assert abs(a - b) <= 1e-6
        assert 0.0 <= a <= 2.0


def test_mssim_mask_excludes_padding():
    x = torch.rand(1, 20, 16, dtype=torch.float64)
    y = torch.rand(1, 20, 16, dtype=torch.float64)
    mask = torch.zeros(1, 20, dtype=torch.bool)
    mask[0, :12] = True
    ref = mssim_loss(x, y, mask)
    x2, y2 = x.clone(), y.clone()
    x2[0, 12:] = torch.rand(8, 16, dtype=torch.float64)
    assert mssim_loss(x2, y2, mask).item() == pytest.approx(ref.item(), abs=1e-12)
    assert mssim_loss(x[:, :12], y[:, :12]).item() == pytest.approx(ref.item(), abs=1e-12)


# -- transformer ---------------------------------------------------------------

@pytest.mark.parametrize("t", [1, 5, 33])
def test_transformer_shape(t):
    block = TransformerBlock(256, 2, 1024, 0.1).eval()
    assert block(torch.randn(2, t, 256)).shape == (2, t, 256)


def test_transformer_masked_rows_do_not_leak():
    block = TransformerBlock(32, 2, 64, 0.0).eval()
    x = torch.randn(1, 8, 32)
    mask = torch.tensor([[1, 1, 1, 1, 1, 0, 0, 0]], dtype=torch.bool)
    y1 = block(x, mask)
    x2 = x.clone()
    x2[0, 5:] = torch.randn(3, 32) * 100
    y2 = block(x2, mask)
    assert torch.allclose(y1[0, :5], y2[0, :5], atol=1e-6)


def test_attention_rows_sum_to_one_over_valid_keys():
    att = MultiHeadAttention(32, 2, 0.0).eval()
    mask = torch.tensor([[1, 1, 1, 0, 0]], dtype=torch.bool)
    att(torch.randn(1, 5, 32), mask)
    w = att.last_attention  # (B, heads, T, T)
    assert torch.allclose(w[..., :3].sum(-1), torch.ones_like(w[..., 0]), atol=1e-6)
    assert torch.all(w[..., 3:] == 0)
