"""Heuristic baselines and the learned policy variants behind one interface.

Every agent exposes `reset()` and `act(env) -> action`; learned agents read the
environment's encoded state, heuristics may inspect the cluster directly.
"""
import logging
from typing import Optional, Tuple

import numpy as np
import torch
from torch import nn

from aigc.adsac.cluster import utility
from aigc.adsac.config import HEURISTIC_TAGS, LEARNED_TAGS, POLICY_TAGS, TrainerConfig
from aigc.adsac.diffusion import AttentionNoisePredictor, DiffusionPolicy, MlpNoisePredictor
from aigc.adsac.diffusion import PolicyOutput, build_schedule
from aigc.adsac.env import EdgeEnv
from aigc.adsac.exceptions import InvalidConfig
from aigc.adsac.nn import DTYPE, entropy, mlp, softmax

lg = logging.getLogger(__name__)


def random_policy(state: np.ndarray, rng: np.random.Generator, n_actions: int = 20) -> int:
    return int(rng.integers(0, n_actions))


def round_robin_policy(cursor: int, n_actions: int = 20) -> Tuple[int, int]:
    return cursor, (cursor + 1) % n_actions


def _roomiest_action(env: EdgeEnv, candidates: np.ndarray, key) -> int:
    """Lowest model id on the server maximising `key` among candidate models."""
    best, best_key = -1, None
    for action in np.flatnonzero(candidates):
        k = key(env.cluster.server_of(int(action)))
        if best_key is None or k > best_key:
            best, best_key = int(action), k
    return best


def crash_avoid_policy(env: EdgeEnv) -> int:
    """Model on the feasible server with the most remaining capacity, utility-blind."""
    feasible = env.feasible_actions()
    if feasible.any():
        return _roomiest_action(env, feasible, lambda s: s.remaining_fraction)
    everything = np.ones(env.n_actions, dtype=bool)
    return _roomiest_action(env, everything, lambda s: s.slack)


def prophet_policy(env: EdgeEnv, table: Optional[np.ndarray] = None) -> int:
    """Feasible model with the highest true utility for the pending task."""
    feasible = env.feasible_actions()
    if not feasible.any():
        return crash_avoid_policy(env)
    task = env.pending
    models = env.cluster.models
    if table is None:
        gains = [utility(models[a], task, env.config) for a in range(env.n_actions)]
    else:
        cfg = env.config
        gains = [cfg.beta_mix * table[a, task.ttype] + cfg.kappa * task.demand
                 for a in range(env.n_actions)]
    best, best_gain = -1, -np.inf
    for a in np.flatnonzero(feasible):
        if gains[a] > best_gain:
            best, best_gain = int(a), gains[a]
    return best


class Agent:
    tag = ""

    def reset(self) -> None:
        pass

    def act(self, env: EdgeEnv) -> int:
        raise NotImplementedError


class RandomAgent(Agent):
    tag = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def reset(self) -> None:
        self.rng = np.random.default_rng(self.seed)

    def act(self, env: EdgeEnv) -> int:
        return random_policy(env.state(), self.rng, env.n_actions)


class RoundRobinAgent(Agent):
    tag = "round_robin"

    def __init__(self):
        self.cursor = 0

    def reset(self) -> None:
        self.cursor = 0

    def act(self, env: EdgeEnv) -> int:
        action, self.cursor = round_robin_policy(self.cursor, env.n_actions)
        return action


class CrashAvoidAgent(Agent):
    tag = "crash_avoid"

    def act(self, env: EdgeEnv) -> int:
        return crash_avoid_policy(env)


class ProphetAgent(Agent):
    tag = "prophet"

    def act(self, env: EdgeEnv) -> int:
        return prophet_policy(env, env.cluster.utility_table)


class MlpPolicy(nn.Module):
    """Direct state → logits network with a softmax head."""

    def __init__(self, state_dim: int, n_actions: int, hidden: int = 256):
        super().__init__()
        self.net = mlp([state_dim, hidden, hidden, n_actions])

    def distribution(self, states: torch.Tensor, generator: Optional[torch.Generator] = None):
        logits = self.net(states)
        probs = softmax(logits)
        return PolicyOutput(logits, probs, entropy(probs))


class LearnedAgent(Agent):
    """Acts with a trained policy: sampled actions in training, argmax in evaluation."""

    def __init__(self, policy: nn.Module, tag: str, greedy: bool = True, seed: int = 0):
        self.policy = policy
        self.tag = tag
        self.greedy = greedy
        self.seed = seed
        self.generator = torch.Generator().manual_seed(seed)

    def reset(self) -> None:
        self.generator = torch.Generator().manual_seed(self.seed)

    def act(self, env: EdgeEnv) -> int:
        return select_action(self.policy, env.state(), self.generator, self.greedy)


def select_action(policy: nn.Module, state: np.ndarray, generator: torch.Generator,
                  greedy: bool) -> int:
    with torch.no_grad():
        out = policy.distribution(torch.as_tensor(state, dtype=DTYPE), generator)
    if greedy:
        return int(torch.argmax(out.probs))
    return int(torch.multinomial(out.probs, 1, generator=generator))


def build_policy(config: TrainerConfig, state_dim: int, n_actions: int) -> nn.Module:
    """Fresh network for a learned policy tag; initialisation follows `config.seed`."""
    if config.policy not in LEARNED_TAGS:
        raise InvalidConfig(
            f"{config.policy!r} is not a learned policy, valid tags: {', '.join(LEARNED_TAGS)}"
        )
    torch.manual_seed(config.seed)
    if config.policy == "sac_mlp":
        return MlpPolicy(state_dim, n_actions, config.hidden)
    sched = build_schedule(config.diffusion_steps, config.beta_lo, config.beta_hi, config.variance)
    if config.policy == "adsac":
        predictor = AttentionNoisePredictor(
            n_actions, state_dim, sched.T, config.x_feature, config.state_feature,
            config.time_dim, config.attn_dim, config.hidden,
        )
    else:
        predictor = MlpNoisePredictor(
            n_actions, state_dim, sched.T, config.x_feature, config.state_feature,
            config.time_dim, config.hidden,
        )
    return DiffusionPolicy(predictor, sched)


def make_agent(tag: str, seed: int = 0, policy: Optional[nn.Module] = None) -> Agent:
    if tag not in POLICY_TAGS:
        raise InvalidConfig(f"unknown policy {tag!r}, valid tags: {', '.join(POLICY_TAGS)}")
    if tag in HEURISTIC_TAGS:
        return {
            "random": lambda: RandomAgent(seed),
            "round_robin": RoundRobinAgent,
            "crash_avoid": CrashAvoidAgent,
            "prophet": ProphetAgent,
        }[tag]()
    if policy is None:
        raise InvalidConfig(f"policy {tag!r} needs a trained network")
    return LearnedAgent(policy, tag, greedy=True, seed=seed)
