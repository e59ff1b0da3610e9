"""Discrete-action soft actor-critic: replay, twin critics, losses and updates."""
import copy
import logging
from dataclasses import dataclass
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np
import torch
from torch import nn

from aigc.adsac.config import TrainerConfig
from aigc.adsac.diffusion import PolicyOutput
from aigc.adsac.exceptions import ContractViolation
from aigc.adsac.nn import ParamSet, adam_step, make_optimizer, mlp

lg = logging.getLogger(__name__)


class Transition(NamedTuple):
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool


@dataclass
class Batch:
    s: torch.Tensor
    a: torch.Tensor
    r: torch.Tensor
    s_next: torch.Tensor
    done: torch.Tensor

    def __len__(self):
        return self.s.shape[0]


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, state_dim: int, n_actions: int, seed: int = 0):
        if capacity < 1:
            raise ContractViolation(f"buffer capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.state_dim = state_dim
        self.n_actions = n_actions
        self._s = np.zeros((capacity, state_dim), dtype=np.float64)
        self._s_next = np.zeros((capacity, state_dim), dtype=np.float64)
        self._a = np.zeros(capacity, dtype=np.int64)
        self._r = np.zeros(capacity, dtype=np.float64)
        self._done = np.zeros(capacity, dtype=np.float64)
        self._head = 0
        self.size = 0
        self._rng = np.random.default_rng(seed)

    def __len__(self):
        return self.size

    def add(self, tr: Transition) -> None:
        if not 0 <= tr.a < self.n_actions:
            raise ContractViolation(f"action {tr.a} out of range")
        if len(tr.s) != self.state_dim or len(tr.s_next) != self.state_dim:
            raise ContractViolation("transition state dimension mismatch")
        i = self._head
        self._s[i] = tr.s
        self._a[i] = tr.a
        self._r[i] = tr.r
        self._s_next[i] = tr.s_next
        self._done[i] = float(tr.done)
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int) -> np.ndarray:
        if self.size == 0:
            raise ContractViolation("cannot sample from an empty buffer")
        return self._rng.integers(0, self.size, size=n)

    def sample(self, n: int) -> Batch:
        return self.batch(self.sample_indices(n))

    def batch(self, idx: np.ndarray) -> Batch:
        return Batch(
            torch.from_numpy(self._s[idx]),
            torch.from_numpy(self._a[idx]),
            torch.from_numpy(self._r[idx]),
            torch.from_numpy(self._s_next[idx]),
            torch.from_numpy(self._done[idx]),
        )


class Critic(nn.Module):
    """Q-network mapping a state to one value per action."""

    def __init__(self, state_dim: int, n_actions: int, hidden: int = 256):
        super().__init__()
        self.net = mlp([state_dim, hidden, hidden, n_actions])

    def forward(self, s: torch.Tensor) -> torch.Tensor:
        return self.net(s)


class CriticPair(nn.Module):
    """Twin online critics and their slowly tracking targets."""

    def __init__(self, state_dim: int, n_actions: int, hidden: int = 256):
        super().__init__()
        self.q1 = Critic(state_dim, n_actions, hidden)
        self.q2 = Critic(state_dim, n_actions, hidden)
        self.q1_target = copy.deepcopy(self.q1)
        self.q2_target = copy.deepcopy(self.q2)
        for p in list(self.q1_target.parameters()) + list(self.q2_target.parameters()):
            p.requires_grad_(False)

    def online_min(self, s: torch.Tensor) -> torch.Tensor:
        return torch.min(self.q1(s), self.q2(s))

    def target_min(self, s: torch.Tensor) -> torch.Tensor:
        return torch.min(self.q1_target(s), self.q2_target(s))


def critic_q(critic: nn.Module, s: torch.Tensor) -> torch.Tensor:
    return critic(s)


def soft_value(critics: CriticPair, policy_out: PolicyOutput, s_next: torch.Tensor,
               alpha: float) -> torch.Tensor:
    """V(s′) = Σ_a π(a|s′) · min_i Q_i⁻(s′, a) + α · H(π(·|s′))."""
    q = critics.target_min(s_next)
    return (policy_out.probs * q).sum(dim=-1) + alpha * policy_out.entropy


def td_target(policy, critics: CriticPair, batch: Batch, config: TrainerConfig,
              generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """y = r + γ(1 − done) V(s′), carrying no gradient."""
    with torch.no_grad():
        out = policy.distribution(batch.s_next, generator)
        v = soft_value(critics, out, batch.s_next, config.alpha_entropy)
        return batch.r + config.gamma * (1.0 - batch.done) * v


def critic_loss(critics: CriticPair, batch: Batch, policy, config: TrainerConfig,
                generator: Optional[torch.Generator] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    if len(batch) == 0:
        raise ContractViolation("critic loss needs a nonempty batch")
    y = td_target(policy, critics, batch, config, generator)
    a = batch.a.unsqueeze(-1)
    q1 = critics.q1(batch.s).gather(-1, a).squeeze(-1)
    q2 = critics.q2(batch.s).gather(-1, a).squeeze(-1)
    return ((q1 - y) ** 2).mean(), ((q2 - y) ** 2).mean()


def policy_objective(out: PolicyOutput, q: torch.Tensor, alpha: float) -> torch.Tensor:
    """Per-state Σ_a π(a|s) Q(s, a) + α H(π(·|s))."""
    return (out.probs * q).sum(dim=-1) + alpha * out.entropy


def policy_loss(policy, critics: CriticPair, batch: Batch, config: TrainerConfig,
                generator: Optional[torch.Generator] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """Negated soft policy objective; returns (loss, mean entropy)."""
    if len(batch) == 0:
        raise ContractViolation("policy loss needs a nonempty batch")
    with torch.no_grad():
        q = critics.online_min(batch.s)
    out = policy.distribution(batch.s, generator)
    loss = -policy_objective(out, q, config.alpha_entropy).mean()
    return loss, out.entropy.detach().mean()


def soft_update(online: nn.Module, target: nn.Module, tau: float) -> None:
    """ω⁻ ← τ ω + (1 − τ) ω⁻, elementwise."""
    with torch.no_grad():
        for p, tp in zip(online.parameters(), target.parameters()):
            tp.lerp_(p, tau)


class SacLearner:
    """Policy, critics and their optimizer states."""

    def __init__(self, policy: nn.Module, critics: CriticPair, config: TrainerConfig,
                 generator: Optional[torch.Generator] = None):
        self.policy = policy
        self.critics = critics
        self.config = config
        self.generator = generator if generator is not None else torch.Generator()
        self.policy_params = ParamSet(policy=policy)
        self.q1_params = ParamSet(q1=critics.q1)
        self.q2_params = ParamSet(q2=critics.q2)
        self.opt_policy = make_optimizer(self.policy_params, config.lr_policy)
        self.opt_q1 = make_optimizer(self.q1_params, config.lr_critic)
        self.opt_q2 = make_optimizer(self.q2_params, config.lr_critic)
        self.updates = 0


def update_step(learner: SacLearner, buffer: ReplayBuffer) -> Optional[Dict[str, float]]:
    """One critic, policy and target update; None when the buffer is too small."""
    cfg = learner.config
    if len(buffer) < max(cfg.batch, cfg.warmup_steps):
        lg.debug("skipping update: %d transitions buffered", len(buffer))
        return None
    batch = buffer.sample(cfg.batch)
    g = learner.generator

    loss_1, loss_2 = critic_loss(learner.critics, batch, learner.policy, cfg, g)
    adam_step(learner.q1_params, loss_1, learner.opt_q1)
    adam_step(learner.q2_params, loss_2, learner.opt_q2)

    loss_pi, mean_entropy = policy_loss(learner.policy, learner.critics, batch, cfg, g)
    adam_step(learner.policy_params, loss_pi, learner.opt_policy)

    soft_update(learner.critics.q1, learner.critics.q1_target, cfg.tau)
    soft_update(learner.critics.q2, learner.critics.q2_target, cfg.tau)
    learner.updates += 1
    return {
        "policy_loss": loss_pi.item(),
        "critic_loss_1": loss_1.item(),
        "critic_loss_2": loss_2.item(),
        "mean_entropy": mean_entropy.item(),
    }
