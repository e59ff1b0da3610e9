"""Brute-force and closed-form checks of the simulator, the chain and the gradients."""
import itertools
import logging
from dataclasses import replace
from typing import Callable, Dict, List, Optional, Tuple

import torch

from aigc.adsac.baselines import ProphetAgent, build_policy
from aigc.adsac.cluster import Cluster, ModelProfile, Server
from aigc.adsac.config import LEARNED_TAGS, ClusterConfig, TrainerConfig
from aigc.adsac.diffusion import AttentionNoisePredictor, NoiseSchedule, build_schedule
from aigc.adsac.diffusion import sample_policy
from aigc.adsac.env import EdgeEnv, ScriptedArrival
from aigc.adsac.exceptions import CheckFailed
from aigc.adsac.guard import guard
from aigc.adsac.nn import DTYPE, ParamSet, grad_check, zero_
from aigc.adsac.sac import Batch, CriticPair, critic_loss, policy_loss

lg = logging.getLogger(__name__)

GRAD_TOLERANCE = 1e-4
VARIANCE_TOLERANCE = 0.05

# Two servers with one model each, three overlapping arrivals.
TINY_CONFIG = ClusterConfig(
    n_servers=2,
    models_per_server=1,
    capacity_range=(250, 300),
    horizon=1000.0,
    beta_mix=1.0,
    kappa=0.002,
    penalty_p=1.0,
    duration_per_step=1.0,
)
TINY_ARRIVALS = (
    ScriptedArrival(0.0, 0, 200),
    ScriptedArrival(50.0, 1, 150),
    ScriptedArrival(100.0, 0, 100),
)
# Episode reward of every action sequence, worked out by hand from the
# utility and crash-penalty formulas.
TINY_TOTALS: Dict[Tuple[int, int, int], float] = {
    (0, 0, 0): 1.3 - 1.75 + 1.1,
    (0, 0, 1): 1.3 - 1.75 + 0.4,
    (0, 1, 0): 1.3 + 1.0 + 1.1,
    (0, 1, 1): 1.3 + 1.0 + 0.4,
    (1, 0, 0): 0.6 + 0.4 + 1.1,
    (1, 0, 1): 0.6 + 0.4 - 1.5,
    (1, 1, 0): 0.6 - 1.75 + 1.1,
    (1, 1, 1): 0.6 - 1.75 + 0.4,
}


def tiny_cluster() -> Cluster:
    return Cluster(
        servers=[Server(0, 300), Server(1, 250)],
        models=[
            ModelProfile(0, 0, (0.9, 0.1, 0.5, 0.5)),
            ModelProfile(1, 1, (0.2, 0.7, 0.5, 0.5)),
        ],
    )


def tiny_env(record_trace: bool = False) -> EdgeEnv:
    return EdgeEnv(TINY_CONFIG, tiny_cluster(), TINY_ARRIVALS, record_trace=record_trace)


def play(env: EdgeEnv, actions, seed: int = 0) -> float:
    env.reset(seed)
    total = 0.0
    for a in actions:
        total += env.step(a).reward
    return total


def check_enumeration(tol: float = 1e-12) -> Dict[str, object]:
    """Every action sequence on the tiny instance earns its hand-computed reward."""
    env = tiny_env()
    observed = {}
    for seq in itertools.product(range(env.n_actions), repeat=len(TINY_ARRIVALS)):
        observed[seq] = play(env, seq)
        if not env.done:
            raise CheckFailed(f"enumeration {seq}", "episode still running", "done")
        if abs(observed[seq] - TINY_TOTALS[seq]) > tol:
            raise CheckFailed(f"enumeration {seq}", observed[seq], TINY_TOTALS[seq])

    best = max(observed, key=observed.get)
    agent = ProphetAgent()
    env.reset(0)
    prophet_seq: List[int] = []
    prophet_total = 0.0
    while not env.done:
        a = agent.act(env)
        prophet_seq.append(a)
        prophet_total += env.step(a).reward
    lg.info(
        "enumeration: optimal %s = %.4f, prophet %s = %.4f",
        best, observed[best], tuple(prophet_seq), prophet_total,
    )
    return {
        "optimal_sequence": best,
        "optimal_reward": observed[best],
        "prophet_sequence": tuple(prophet_seq),
        "prophet_reward": prophet_total,
        "gap": observed[best] - prophet_total,
    }


def variance_recurrence(sched: NoiseSchedule) -> float:
    """Var(x̂_0) for a zero noise predictor: V_{t−1} = V_t/α_t + σ_t², V_T = 1."""
    v = 1.0
    for t in range(sched.T, 0, -1):
        v = v / float(sched.alpha[t - 1]) + float(sched.sigma[t - 1]) ** 2
    return v


def check_zero_predictor_variance(
    sched: Optional[NoiseSchedule] = None, n: int = 10_000, seed: int = 0,
    tol: float = VARIANCE_TOLERANCE,
) -> Dict[str, float]:
    cfg = TrainerConfig()
    sched = sched or build_schedule(cfg.diffusion_steps, cfg.beta_lo, cfg.beta_hi, cfg.variance)
    state_dim, n_actions = ClusterConfig().state_dim, ClusterConfig().n_models
    predictor = zero_(AttentionNoisePredictor(n_actions, state_dim, sched.T))
    states = torch.rand(n, state_dim, generator=torch.Generator().manual_seed(seed), dtype=DTYPE)
    with torch.no_grad():
        out = sample_policy(predictor, sched, states, torch.Generator().manual_seed(seed + 1))
    observed = float(out.x0.var())
    expected = variance_recurrence(sched)
    if abs(observed - expected) > tol * expected:
        raise CheckFailed("zero-predictor variance", observed, expected, f"tolerance {tol:.0%}")
    lg.info("zero-predictor variance %.5f vs recurrence %.5f", observed, expected)
    return {"observed": observed, "expected": expected}


def random_batch(n: int, state_dim: int, n_actions: int, seed: int) -> Batch:
    g = torch.Generator().manual_seed(seed)
    return Batch(
        s=torch.rand(n, state_dim, generator=g, dtype=DTYPE),
        a=torch.randint(0, n_actions, (n,), generator=g),
        r=torch.randn(n, generator=g, dtype=DTYPE),
        s_next=torch.rand(n, state_dim, generator=g, dtype=DTYPE),
        done=(torch.rand(n, generator=g) < 0.2).to(DTYPE),
    )


def loss_closures(tag: str, point: int, batch_size: int = 4):
    """(policy-loss closure, policy params, critic-loss closure, critic params) at one point."""
    cluster = ClusterConfig()
    config = replace(TrainerConfig(), policy=tag, seed=1000 + point)
    policy = build_policy(config, cluster.state_dim, cluster.n_models)
    torch.manual_seed(2000 + point)
    critics = CriticPair(cluster.state_dim, cluster.n_models, config.hidden)
    batch = random_batch(batch_size, cluster.state_dim, cluster.n_models, 3000 + point)

    def pi_loss() -> torch.Tensor:
        return policy_loss(policy, critics, batch, config, torch.Generator().manual_seed(point))[0]

    def q_loss() -> torch.Tensor:
        l1, l2 = critic_loss(critics, batch, policy, config, torch.Generator().manual_seed(point))
        return l1 + l2

    return pi_loss, ParamSet(policy=policy), q_loss, ParamSet(q1=critics.q1, q2=critics.q2)


def check_gradients(
    tags=LEARNED_TAGS, points: int = 10, per_tensor: int = 4, tol: float = GRAD_TOLERANCE,
) -> Dict[str, float]:
    """Autograd against central differences for every policy and the critics."""
    worst: Dict[str, float] = {}
    for tag in tags:
        for point in range(points):
            pi_loss, pi_params, q_loss, q_params = loss_closures(tag, point)
            g = torch.Generator().manual_seed(point)
            for key, f, params in ((f"{tag}.policy", pi_loss, pi_params),
                                   (f"{tag}.critics", q_loss, q_params)):
                err = grad_check(f, params, h=1e-5, per_tensor=per_tensor, generator=g)
                worst[key] = max(worst.get(key, 0.0), err)
                if err > tol:
                    raise CheckFailed(f"gradient {key} at point {point}", err, f"< {tol}")
    for key, err in worst.items():
        lg.info("gradient check %s: max relative error %.2e", key, err)
    return worst


CHECKS: Tuple[Tuple[str, Callable[[], object]], ...] = (
    ("tiny-instance enumeration", check_enumeration),
    ("zero-predictor variance", check_zero_predictor_variance),
    ("gradient checks", check_gradients),
)


def run_all(checks=CHECKS) -> List[Tuple[str, bool, object]]:
    """Run every check under its own guard; later checks run after a failure."""
    results = []
    for name, check in checks:
        value = None
        with guard(label=name) as g:
            value = check()
        results.append((name, not g.failed, value if not g.failed else str(g.exception)))
        lg.info("%s: %s", name, "pass" if not g.failed else "FAIL")
    return results
