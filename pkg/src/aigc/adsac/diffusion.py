"""The reverse denoising chain used as a stochastic policy.

Starting from Gaussian noise x_T, T denoising steps conditioned on the state
produce logits x̂_0 whose softmax is the action distribution. Noise draws come
from an explicit generator, so a chain is reproducible and, with the draws
held fixed, differentiable in the predictor parameters.
"""
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import torch
from torch import nn

from aigc.adsac.exceptions import ContractViolation, InvalidConfig
from aigc.adsac.nn import DTYPE, attention, entropy, mlp, sinusoidal_embed, softmax

lg = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step quantities, index 0 holding step t = 1."""

    T: int
    beta: torch.Tensor
    alpha: torch.Tensor
    alpha_bar: torch.Tensor
    sigma: torch.Tensor


class PolicyOutput(NamedTuple):
    x0: torch.Tensor
    probs: torch.Tensor
    entropy: torch.Tensor


def build_schedule(
    T: int, beta_lo: float, beta_hi: float, variance: str = "beta"
) -> NoiseSchedule:
    """Linear β from beta_lo to beta_hi; σ_1 = 0.

    variance="beta" samples with √β_t, variance="posterior" with the
    posterior std √((1 − ᾱ_{t−1}) / (1 − ᾱ_t) · β_t).
    """
    if T < 1:
        raise InvalidConfig(f"need at least one diffusion step, got T={T}")
    if not 0 < beta_lo <= beta_hi < 1:
        raise InvalidConfig(f"need 0 < beta_lo <= beta_hi < 1, got [{beta_lo}, {beta_hi}]")
    if variance not in ("beta", "posterior"):
        raise InvalidConfig(f"unknown variance kind {variance!r}")
    beta = torch.linspace(beta_lo, beta_hi, T, dtype=DTYPE)
    alpha = 1.0 - beta
    bars = []
    running = 1.0
    for a in alpha.tolist():
        running = running * a
        bars.append(running)
    alpha_bar = torch.tensor(bars, dtype=DTYPE)
    if variance == "beta":
        var = beta.clone()
    else:
        prev = torch.cat([torch.ones(1, dtype=DTYPE), alpha_bar[:-1]])
        var = (1.0 - prev) / (1.0 - alpha_bar) * beta
    var[0] = 0.0
    return NoiseSchedule(T, beta, alpha, alpha_bar, torch.sqrt(var))


def denoise_step(
    x_t: torch.Tensor, t: int, eps_hat: torch.Tensor, sched: NoiseSchedule, z: torch.Tensor
) -> torch.Tensor:
    """x_{t−1} = (x_t − (1−α_t)/√(1−ᾱ_t) · ε̂) / √α_t + σ_t · z."""
    if not 1 <= t <= sched.T:
        raise ContractViolation(f"timestep {t} outside [1, {sched.T}]")
    i = t - 1
    alpha = sched.alpha[i]
    coef = (1.0 - alpha) / torch.sqrt(1.0 - sched.alpha_bar[i])
    mean = (x_t - coef * eps_hat) / torch.sqrt(alpha)
    if t == 1:
        return mean
    return mean + sched.sigma[i] * z


class AttentionNoisePredictor(nn.Module):
    """ε_θ(x_t, t, s) with self-attention over three feature tokens.

    The encoded x_t, the encoded state and the sinusoidal timestep embedding
    are projected to a common width and attend to each other; the three
    output tokens are flattened and decoded to the noise estimate.
    """

    def __init__(
        self,
        action_dim: int,
        state_dim: int,
        n_steps: int,
        x_feature: int = 32,
        state_feature: int = 64,
        time_dim: int = 16,
        attn_dim: int = 32,
        hidden: int = 256,
    ):
        super().__init__()
        self.n_steps = n_steps
        self.time_dim = time_dim
        self.x_encoder = mlp([action_dim, x_feature, x_feature])
        self.state_encoder = mlp([state_dim, state_feature, state_feature])
        self.x_token = nn.Linear(x_feature, attn_dim, dtype=DTYPE)
        self.state_token = nn.Linear(state_feature, attn_dim, dtype=DTYPE)
        self.time_token = nn.Linear(time_dim, attn_dim, dtype=DTYPE)
        self.w_q = nn.Linear(attn_dim, attn_dim, bias=False, dtype=DTYPE)
        self.w_k = nn.Linear(attn_dim, attn_dim, bias=False, dtype=DTYPE)
        self.w_v = nn.Linear(attn_dim, attn_dim, bias=False, dtype=DTYPE)
        self.decoder = mlp([3 * attn_dim, hidden, action_dim])

    def forward(self, x_t: torch.Tensor, t: int, s: torch.Tensor) -> torch.Tensor:
        if not 1 <= t <= self.n_steps:
            raise ContractViolation(f"timestep {t} outside [1, {self.n_steps}]")
        emb = sinusoidal_embed(t, self.time_dim).expand(x_t.shape[0], -1)
        tokens = torch.stack(
            (
                self.x_token(self.x_encoder(x_t)),
                self.state_token(self.state_encoder(s)),
                self.time_token(emb),
            ),
            dim=1,
        )
        mixed = attention(self.w_q(tokens), self.w_k(tokens), self.w_v(tokens))
        return self.decoder(mixed.flatten(start_dim=1))


class MlpNoisePredictor(nn.Module):
    """ε_θ(x_t, t, s) decoding the concatenated features without attention."""

    def __init__(
        self,
        action_dim: int,
        state_dim: int,
        n_steps: int,
        x_feature: int = 32,
        state_feature: int = 64,
        time_dim: int = 16,
        hidden: int = 256,
    ):
        super().__init__()
        self.n_steps = n_steps
        self.time_dim = time_dim
        self.x_encoder = mlp([action_dim, x_feature, x_feature])
        self.state_encoder = mlp([state_dim, state_feature, state_feature])
        self.decoder = mlp([x_feature + state_feature + time_dim, hidden, action_dim])

    def forward(self, x_t: torch.Tensor, t: int, s: torch.Tensor) -> torch.Tensor:
        if not 1 <= t <= self.n_steps:
            raise ContractViolation(f"timestep {t} outside [1, {self.n_steps}]")
        emb = sinusoidal_embed(t, self.time_dim).expand(x_t.shape[0], -1)
        features = torch.cat((self.x_encoder(x_t), self.state_encoder(s), emb), dim=-1)
        return self.decoder(features)


def sample_policy(
    predictor: nn.Module,
    sched: NoiseSchedule,
    s: torch.Tensor,
    generator: Optional[torch.Generator] = None,
) -> PolicyOutput:
    """Run the full reverse chain from x_T ~ N(0, I) for a state or a batch of states."""
    single = s.dim() == 1
    states = s.unsqueeze(0) if single else s
    batch = states.shape[0]
    action_dim = predictor.decoder[-1].out_features
    x = torch.randn(batch, action_dim, generator=generator, dtype=DTYPE)
    for t in range(sched.T, 0, -1):
        eps_hat = predictor(x, t, states)
        if t > 1:
            z = torch.randn(batch, action_dim, generator=generator, dtype=DTYPE)
        else:
            z = torch.zeros(batch, action_dim, dtype=DTYPE)
        x = denoise_step(x, t, eps_hat, sched, z)
    probs = softmax(x)
    out = PolicyOutput(x, probs, entropy(probs))
    if single:
        return PolicyOutput(*(v.squeeze(0) for v in out))
    return out


def policy_entropy(probs: Union[torch.Tensor, list]) -> float:
    return float(entropy(torch.as_tensor(probs, dtype=DTYPE)))


class DiffusionPolicy(nn.Module):
    """A noise predictor bound to its schedule."""

    def __init__(self, predictor: nn.Module, sched: NoiseSchedule):
        super().__init__()
        self.predictor = predictor
        self.sched = sched

    def distribution(self, states: torch.Tensor, generator: Optional[torch.Generator] = None):
        return sample_policy(self.predictor, self.sched, states, generator)
