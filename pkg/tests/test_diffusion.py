import math

import numpy as np
import pytest
import torch

from aigc.adsac.diffusion import AttentionNoisePredictor, DiffusionPolicy, MlpNoisePredictor
from aigc.adsac.diffusion import build_schedule, denoise_step, policy_entropy, sample_policy
from aigc.adsac.exceptions import ContractViolation, InvalidConfig
from aigc.adsac.nn import DTYPE, zero_
from aigc.adsac.oracle import check_zero_predictor_variance, variance_recurrence


def test_constant_schedule():
    sched = build_schedule(3, 0.1, 0.1)
    assert np.allclose(sched.alpha_bar.numpy(), [0.9, 0.81, 0.729], atol=1e-12)
    assert sched.sigma[0].item() == 0.0
    assert sched.sigma[1].item() == pytest.approx(math.sqrt(0.1))


def test_default_schedule():
    sched = build_schedule(5, 0.05, 0.5)
    betas = [0.05 + i * (0.5 - 0.05) / 4 for i in range(5)]
    assert np.allclose(sched.beta.numpy(), betas, atol=1e-15)
    running = 1.0
    for i, b in enumerate(betas):
        running *= 1.0 - b
        assert sched.alpha_bar[i].item() == pytest.approx(running, abs=1e-12)
    assert sched.alpha_bar[-1] < sched.alpha_bar[0]
    for i in range(1, 5):
        assert sched.alpha_bar[i].item() == sched.alpha[i].item() * sched.alpha_bar[i - 1].item()


def test_posterior_variance_schedule():
    sched = build_schedule(3, 0.1, 0.1, variance="posterior")
    # (1 − ᾱ_1) / (1 − ᾱ_2) · β_2
    assert sched.sigma[1].item() ** 2 == pytest.approx(0.1 / 0.19 * 0.1)
    assert sched.sigma[0].item() == 0.0


@pytest.mark.parametrize("args", [(0, 0.1, 0.2), (3, 0.0, 0.2), (3, 0.3, 0.2), (3, 0.1, 1.0)])
def test_invalid_schedule(args):
    with pytest.raises(InvalidConfig):
        build_schedule(*args)


def test_unknown_variance_kind():
    with pytest.raises(InvalidConfig):
        build_schedule(3, 0.1, 0.2, variance="learned")


def test_denoise_step_zero_noise():
    sched = build_schedule(3, 0.1, 0.1)
    x = torch.full((1, 4), 2.0, dtype=DTYPE)
    zeros = torch.zeros_like(x)
    out = denoise_step(x, 3, zeros, sched, zeros)
    assert torch.allclose(out, x / math.sqrt(0.9), atol=1e-12)


def test_denoise_step_scalar_oracle():
    sched = build_schedule(3, 0.1, 0.1)
    ones = torch.ones(1, 4, dtype=DTYPE)
    out = denoise_step(ones, 2, ones, sched, torch.zeros_like(ones))
    expected = (1 - 0.1 / math.sqrt(1 - 0.81)) / math.sqrt(0.9)
    assert np.allclose(out.numpy(), expected, atol=1e-12)


def test_last_step_ignores_noise():
    sched = build_schedule(5, 0.05, 0.5)
    x = torch.ones(2, 3, dtype=DTYPE)
    eps = torch.full_like(x, 0.3)
    a = denoise_step(x, 1, eps, sched, torch.zeros_like(x))
    b = denoise_step(x, 1, eps, sched, torch.full_like(x, 9.0))
    assert torch.equal(a, b)


def test_denoise_step_range():
    sched = build_schedule(5, 0.05, 0.5)
    x = torch.ones(1, 2, dtype=DTYPE)
    with pytest.raises(ContractViolation):
        denoise_step(x, 0, x, sched, x)
    with pytest.raises(ContractViolation):
        denoise_step(x, 6, x, sched, x)


@pytest.mark.parametrize("cls", [AttentionNoisePredictor, MlpNoisePredictor])
def test_predictor_shapes_and_determinism(cls):
    torch.manual_seed(0)
    predictor = cls(20, 21, 5)
    x = torch.randn(4, 20, dtype=DTYPE)
    s = torch.rand(4, 21, dtype=DTYPE)
    out = predictor(x, 2, s)
    assert out.shape == (4, 20)
    assert torch.equal(out, predictor(x, 2, s))
    with pytest.raises(ContractViolation):
        predictor(x, 6, s)


def test_zero_predictor_outputs_zero():
    predictor = zero_(AttentionNoisePredictor(20, 21, 5))
    out = predictor(torch.randn(3, 20, dtype=DTYPE), 4, torch.rand(3, 21, dtype=DTYPE))
    assert torch.equal(out, torch.zeros(3, 20, dtype=DTYPE))


def test_mlp_predictor_decodes_concatenated_features():
    predictor = MlpNoisePredictor(20, 21, 5)
    assert predictor.decoder[0].in_features == 32 + 64 + 16


def test_attention_predictor_dimensions():
    predictor = AttentionNoisePredictor(20, 21, 5)
    assert predictor.x_encoder[0].in_features == 20
    assert predictor.state_encoder[-1].out_features == 64
    assert predictor.w_q.weight.shape == (32, 32)
    assert predictor.decoder[0].in_features == 96
    assert predictor.decoder[-1].out_features == 20


def test_sample_policy_distribution():
    torch.manual_seed(0)
    sched = build_schedule(5, 0.05, 0.5)
    policy = DiffusionPolicy(AttentionNoisePredictor(20, 21, 5), sched)
    s = torch.rand(21, dtype=DTYPE)
    a = policy.distribution(s, torch.Generator().manual_seed(3))
    b = policy.distribution(s, torch.Generator().manual_seed(3))
    assert a.probs.shape == (20,)
    assert a.probs.sum().item() == pytest.approx(1.0, abs=1e-12)
    assert (a.probs >= 0).all()
    assert all(torch.equal(u, v) for u, v in zip(a, b))

    batch = sample_policy(policy.predictor, sched, torch.rand(6, 21, dtype=DTYPE),
                          torch.Generator().manual_seed(3))
    assert batch.probs.shape == (6, 20)
    assert batch.entropy.shape == (6,)


def test_policy_entropy():
    assert policy_entropy([0.05] * 20) == pytest.approx(math.log(20))
    assert policy_entropy([1.0] + [0.0] * 19) == 0.0
    assert policy_entropy([0.5, 0.5] + [0.0] * 18) == pytest.approx(math.log(2))


def test_variance_recurrence_by_hand():
    sched = build_schedule(2, 0.1, 0.1)
    # V_1 = 1/0.9 + 0.1, V_0 = V_1/0.9 + 0
    assert variance_recurrence(sched) == pytest.approx((1 / 0.9 + 0.1) / 0.9)


@pytest.mark.parametrize("variance", ["beta", "posterior"])
def test_zero_predictor_variance(variance):
    sched = build_schedule(5, 0.05, 0.5, variance)
    result = check_zero_predictor_variance(sched, n=10_000, seed=7)
    assert result["observed"] == pytest.approx(result["expected"], rel=0.05)
