import math

import numpy as np
import pytest
import torch
from torch import nn

from aigc.adsac.exceptions import ContractViolation, InvalidConfig
from aigc.adsac.nn import DTYPE, ParamSet, adam_step, attention, entropy, grad_check
from aigc.adsac.nn import linear_forward, make_optimizer, mlp, sinusoidal_embed, softmax, zero_


def t(values):
    return torch.tensor(values, dtype=DTYPE)


class Scalar(nn.Module):
    def __init__(self, value):
        super().__init__()
        self.w = nn.Parameter(t([value]))


def test_linear_identity_and_bias():
    x = t([1.0, -2.0, 3.0])
    identity = torch.eye(3, dtype=DTYPE)
    assert torch.equal(linear_forward(identity, torch.zeros(3, dtype=DTYPE), x), x)
    c = t([4.0, 5.0])
    assert torch.equal(linear_forward(torch.zeros(2, 3, dtype=DTYPE), c, x), c)


def test_linear_matches_loops():
    g = torch.Generator().manual_seed(0)
    W = torch.randn(4, 3, generator=g, dtype=DTYPE)
    b = torch.randn(4, generator=g, dtype=DTYPE)
    x = torch.randn(3, generator=g, dtype=DTYPE)
    expected = [
        sum(W[i, j].item() * x[j].item() for j in range(3)) + b[i].item() for i in range(4)
    ]
    assert np.allclose(linear_forward(W, b, x).numpy(), expected, atol=1e-12, rtol=0)


def test_linear_shape_mismatch():
    with pytest.raises(ContractViolation):
        linear_forward(torch.zeros(2, 3, dtype=DTYPE), torch.zeros(2, dtype=DTYPE), t([1.0, 2.0]))


def test_softmax_cases():
    uniform = softmax(torch.zeros(4, dtype=DTYPE))
    assert torch.allclose(uniform, torch.full((4,), 0.25, dtype=DTYPE))
    big = softmax(t([1000.0, 0.0]))
    assert torch.isfinite(big).all()
    assert big[0].item() == pytest.approx(1.0) and big[1].item() == pytest.approx(0.0, abs=1e-300)
    e = [math.exp(v) for v in (1, 2, 3)]
    assert np.allclose(softmax(t([1.0, 2.0, 3.0])).numpy(), [v / sum(e) for v in e], atol=1e-12)


def test_entropy_cases():
    assert entropy(torch.full((20,), 0.05, dtype=DTYPE)).item() == pytest.approx(math.log(20))
    assert entropy(torch.eye(20, dtype=DTYPE)[3]).item() == 0.0
    half = torch.zeros(20, dtype=DTYPE)
    half[:2] = 0.5
    assert entropy(half).item() == pytest.approx(math.log(2))


def test_sinusoidal_embedding():
    zero = sinusoidal_embed(0, 16)
    assert torch.equal(zero[0::2], torch.zeros(8, dtype=DTYPE))
    assert torch.equal(zero[1::2], torch.ones(8, dtype=DTYPE))
    one = sinusoidal_embed(1, 2)
    assert one.tolist() == pytest.approx([math.sin(1), math.cos(1)])
    assert sinusoidal_embed(torch.tensor([1, 2, 3]), 16).shape == (3, 16)


def test_sinusoidal_odd_dimension():
    with pytest.raises(InvalidConfig):
        sinusoidal_embed(1, 15)


def test_attention_single_token():
    V = t([[1.0, 2.0, 3.0]])
    assert torch.equal(attention(t([[0.3, 0.1]]), t([[2.0, -1.0]]), V), V)


def test_attention_uniform_scores():
    Q = t([[0.0, 0.0]] * 2)
    K = t([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    V = t([[1.0, 0.0], [2.0, 1.0], [6.0, 5.0]])
    out = attention(Q, K, V)
    assert torch.allclose(out, V.mean(dim=0).expand(2, -1), atol=1e-12)


def test_attention_matches_loops():
    g = torch.Generator().manual_seed(1)
    Q, K, V = (torch.randn(3, 4, generator=g, dtype=DTYPE) for _ in range(3))
    out = attention(Q, K, V)
    for i in range(3):
        scores = [sum(Q[i, d].item() * K[j, d].item() for d in range(4)) / 2.0 for j in range(3)]
        weights = [math.exp(s) for s in scores]
        total = sum(weights)
        expected = [sum(weights[j] / total * V[j, d].item() for j in range(3)) for d in range(4)]
        assert np.allclose(out[i].numpy(), expected, atol=1e-10, rtol=0)


def test_attention_shape_mismatch():
    with pytest.raises(ContractViolation):
        attention(torch.zeros(2, 3, dtype=DTYPE), torch.zeros(2, 4, dtype=DTYPE),
                  torch.zeros(2, 4, dtype=DTYPE))


def test_backward_scalar():
    m = Scalar(3.0)
    params = ParamSet(m=m)
    grads = params.backward((m.w * m.w).sum())
    assert grads["m.w"].item() == pytest.approx(6.0)


def test_backward_constant_gives_zero():
    m = Scalar(3.0)
    grads = ParamSet(m=m).backward(torch.tensor(2.0, dtype=DTYPE))
    assert grads["m.w"].item() == 0.0


def test_backward_contracts():
    params = ParamSet(m=Scalar(1.0))
    with pytest.raises(ContractViolation):
        params.backward(None)
    with pytest.raises(ContractViolation):
        params.backward(torch.ones(2, dtype=DTYPE, requires_grad=True))


def test_adam_zero_gradient_leaves_params():
    m = Scalar(2.0)
    params = ParamSet(m=m)
    opt = make_optimizer(params, lr=0.1)
    adam_step(params, (m.w * 0.0).sum(), opt)
    assert m.w.item() == 2.0


def test_adam_first_step_is_lr_sign():
    m = Scalar(2.0)
    params = ParamSet(m=m)
    opt = make_optimizer(params, lr=0.1)
    adam_step(params, (-5.0 * m.w).sum(), opt)
    assert m.w.item() == pytest.approx(2.1, abs=1e-6)


def test_adam_constant_gradient_steps():
    m = Scalar(0.0)
    params = ParamSet(m=m)
    opt = make_optimizer(params, lr=0.01)
    previous = 0.0
    for _ in range(200):
        adam_step(params, (3.0 * m.w).sum(), opt)
        step = m.w.item() - previous
        previous = m.w.item()
        assert step == pytest.approx(-0.01, rel=1e-5)


def test_grad_check_quadratic_and_linear():
    g = torch.Generator().manual_seed(0)
    net = nn.Linear(3, 2, dtype=DTYPE)
    x = 1.0 + torch.rand(5, 3, generator=g, dtype=DTYPE)
    params = ParamSet(net=net)
    # the shift keeps every output positive, so no gradient is near zero
    assert grad_check(lambda: ((net(x) + 5.0) ** 2).sum(), params, generator=g) < 1e-7
    assert grad_check(lambda: net(x).sum(), params, generator=g) < 1e-10


def test_grad_check_full_noise_predictor():
    from aigc.adsac.diffusion import AttentionNoisePredictor

    torch.manual_seed(0)
    predictor = AttentionNoisePredictor(20, 21, 5)
    g = torch.Generator().manual_seed(1)
    x = torch.randn(3, 20, generator=g, dtype=DTYPE)
    s = torch.rand(3, 21, generator=g, dtype=DTYPE)
    assert grad_check(lambda: predictor(x, 3, s).pow(2).mean(), ParamSet(p=predictor),
                      per_tensor=3, generator=g) < 1e-4


def test_grad_check_skips_relu_kink():
    # pre-activation sits 5.2e-7 below zero, inside both finite-difference steps
    kinked = nn.Linear(1, 1, dtype=DTYPE)
    smooth = nn.Linear(2, 1, dtype=DTYPE)
    with torch.no_grad():
        kinked.weight.fill_(1.0)
        kinked.bias.fill_(-1.0 - 5.2e-7)
    x = torch.ones(1, 1, dtype=DTYPE)
    z = torch.tensor([[0.5, -2.0]], dtype=DTYPE)

    def loss():
        return torch.relu(kinked(x)).sum() * 3.0 + (smooth(z) + 4.0).pow(2).sum()

    params = ParamSet(kinked=kinked, smooth=smooth)
    assert grad_check(loss, params, generator=torch.Generator().manual_seed(0)) < 1e-6
    assert kinked.bias.item() == -1.0 - 5.2e-7
    assert kinked.weight.item() == 1.0


def test_grad_check_catches_wrong_gradient(mis_signed):
    net = nn.Linear(3, 1, dtype=DTYPE)
    x = torch.ones(2, 3, dtype=DTYPE)
    err = grad_check(lambda: mis_signed(net(x)).pow(2).sum() + 1.0, ParamSet(net=net))
    assert err > 1e-4


def test_mlp_layout():
    net = mlp([21, 256, 256, 20], zero=True)
    assert [type(m).__name__ for m in net] == ["Linear", "ReLU", "Linear", "ReLU", "Linear"]
    assert torch.equal(net(torch.ones(21, dtype=DTYPE)), torch.zeros(20, dtype=DTYPE))
    assert zero_(nn.Linear(2, 2, dtype=DTYPE)).weight.abs().sum().item() == 0.0
