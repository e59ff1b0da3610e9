"""Training and evaluation loops."""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import torch
from torch import nn

from aigc.adsac.baselines import Agent, LearnedAgent, build_policy, select_action
from aigc.adsac.config import TrainerConfig
from aigc.adsac.env import EdgeEnv, MetricsAccumulator
from aigc.adsac.exceptions import InvalidConfig
from aigc.adsac.sac import CriticPair, ReplayBuffer, SacLearner, Transition, update_step

lg = logging.getLogger(__name__)

EnvFactory = Callable[[], EdgeEnv]

# training and evaluation episodes draw from disjoint seed blocks
EVAL_SEED_BASE = 1 << 40
_MAX_EMPTY_EPISODES = 1000

METRIC_COLUMNS = (
    "epoch",
    "env_steps",
    "train_reward_mean",
    "eval_reward_mean",
    "eval_reward_std",
    "crash_rate",
    "lost_utility",
    "policy_loss",
    "critic_loss_1",
    "critic_loss_2",
    "mean_entropy",
)


def train_seed(seed: int, episode: int) -> int:
    return (seed << 20) + episode


def eval_seed(seed: int, episode: int) -> int:
    return EVAL_SEED_BASE + seed * 1000 + episode


@dataclass
class EvalReport:
    reward_mean: float
    reward_std: float
    crash_rate: float
    lost_utility: float
    episodes: List[MetricsAccumulator] = field(default_factory=list)

    @property
    def rewards(self) -> List[float]:
        return [m.cumulative_reward for m in self.episodes]


@dataclass
class EpochRecord:
    epoch: int
    env_steps: int
    train_reward_mean: float
    eval_reward_mean: float
    eval_reward_std: float
    crash_rate: float
    lost_utility: float
    policy_loss: float
    critic_loss_1: float
    critic_loss_2: float
    mean_entropy: float


@dataclass
class TrainResult:
    policy: nn.Module
    critics: CriticPair
    records: List[EpochRecord]
    episode_rewards: List[float]

    @property
    def train_reward(self) -> float:
        """Mean episode reward over the final 10% of finished training episodes."""
        if not self.episode_rewards:
            return math.nan
        n = max(1, math.ceil(0.1 * len(self.episode_rewards)))
        return float(np.mean(self.episode_rewards[-n:]))


def _reset(env: EdgeEnv, seed_of: Callable[[int], int], start: int):
    """Reset on successive seeds until the episode has at least one task."""
    k = start
    state = env.reset(seed_of(k))
    while env.done:
        k += 1
        if k - start > _MAX_EMPTY_EPISODES:
            raise InvalidConfig("no task arrives before the horizon; raise lambda or horizon")
        state = env.reset(seed_of(k))
    return state, k


def run_episode(env: EdgeEnv, agent: Agent, seed: int) -> MetricsAccumulator:
    agent.reset()
    env.reset(seed)
    while not env.done:
        env.step(agent.act(env))
    lg.debug(
        "%s episode seed=%d: reward %.3f, %d tasks, crash rate %.4f",
        agent.tag, seed, env.metrics.cumulative_reward, env.metrics.total_tasks,
        env.metrics.crash_rate,
    )
    return env.metrics


def evaluate(agent: Agent, env_factory: EnvFactory, n_episodes: int, seed: int = 0) -> EvalReport:
    """Roll out `n_episodes` on the evaluation seed block."""
    env = env_factory()
    episodes = [run_episode(env, agent, eval_seed(seed, i)) for i in range(n_episodes)]
    rewards = np.array([m.cumulative_reward for m in episodes])
    total = sum(m.total_tasks for m in episodes)
    crashed = sum(m.crashed_tasks for m in episodes)
    return EvalReport(
        reward_mean=float(rewards.mean()),
        reward_std=float(rewards.std()),
        crash_rate=crashed / total if total else 0.0,
        lost_utility=float(np.mean([m.lost_utility for m in episodes])),
        episodes=episodes,
    )


def _mean(values: List[float]) -> float:
    return float(np.mean(values)) if values else math.nan


def _last(values: List[float]) -> float:
    return values[-1] if values else math.nan


def train(
    env_factory: EnvFactory,
    config: TrainerConfig,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """Collect transitions with the current policy and update after warmup.

    Deterministic given `config.seed`: network initialisation, exploration,
    replay sampling, chain noise and episode seeds all derive from it.
    """
    config.validate()
    env = env_factory()
    policy = build_policy(config, env.state_dim, env.n_actions)
    torch.manual_seed(config.seed + 1)
    critics = CriticPair(env.state_dim, env.n_actions, config.hidden)
    learner = SacLearner(policy, critics, config, torch.Generator().manual_seed(config.seed))
    buffer = ReplayBuffer(config.buffer_capacity, env.state_dim, env.n_actions, seed=config.seed)
    explore = np.random.default_rng(config.seed)

    lg.info(
        "training %s for %d epochs x %d steps (seed %d)",
        config.policy, config.epochs, config.steps_per_epoch, config.seed,
    )
    episode_rewards: List[float] = []
    records: List[EpochRecord] = []
    state, episode = _reset(env, lambda k: train_seed(config.seed, k), 0)
    episode_reward = 0.0
    env_steps = 0
    report: Optional[EvalReport] = None

    for epoch in range(config.epochs):
        finished: List[float] = []
        diagnostics: List[dict] = []
        for _ in range(config.steps_per_epoch):
            if env_steps < config.warmup_steps:
                action = int(explore.integers(0, env.n_actions))
            else:
                action = select_action(policy, state, learner.generator, greedy=False)
            out = env.step(action)
            buffer.add(Transition(state, action, out.reward, out.next_state, out.done))
            episode_reward += out.reward
            env_steps += 1
            state = out.next_state
            if out.done:
                finished.append(episode_reward)
                episode_rewards.append(episode_reward)
                episode_reward = 0.0
                state, episode = _reset(env, lambda k: train_seed(config.seed, k), episode + 1)
            if env_steps >= config.warmup_steps:
                for _ in range(config.updates_per_step):
                    d = update_step(learner, buffer)
                    if d is not None:
                        diagnostics.append(d)

        last = epoch == config.epochs - 1
        if (epoch + 1) % config.eval_every == 0 or last:
            agent = LearnedAgent(policy, config.policy, greedy=True, seed=config.seed)
            report = evaluate(agent, env_factory, config.eval_episodes, config.seed)

        record = EpochRecord(
            epoch=epoch,
            env_steps=env_steps,
            train_reward_mean=_mean(finished) if finished else _last(episode_rewards),
            eval_reward_mean=report.reward_mean if report else math.nan,
            eval_reward_std=report.reward_std if report else math.nan,
            crash_rate=report.crash_rate if report else math.nan,
            lost_utility=report.lost_utility if report else math.nan,
            policy_loss=_mean([d["policy_loss"] for d in diagnostics]),
            critic_loss_1=_mean([d["critic_loss_1"] for d in diagnostics]),
            critic_loss_2=_mean([d["critic_loss_2"] for d in diagnostics]),
            mean_entropy=_mean([d["mean_entropy"] for d in diagnostics]),
        )
        records.append(record)
        lg.info(
            "epoch %d: steps %d train %.3f eval %.3f crash %.4f policy_loss %.4f",
            epoch, env_steps, record.train_reward_mean, record.eval_reward_mean,
            record.crash_rate, record.policy_loss,
        )
        if on_epoch is not None:
            on_epoch(record)

    return TrainResult(policy, critics, records, episode_rewards)
