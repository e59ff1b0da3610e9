"""Discrete-event simulation of the edge cluster as an MDP.

One step resolves the pending task onto the chosen model, then advances the
clock through completions up to the next arrival (or the horizon).
"""
import heapq
import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from aigc.adsac.cluster import Cluster, Task, make_cluster, next_interarrival, penalty
from aigc.adsac.cluster import spawn_task, utility
from aigc.adsac.config import ClusterConfig
from aigc.adsac.exceptions import ContractViolation

lg = logging.getLogger(__name__)

# event kinds; completions sort before arrivals at equal times
COMPLETION = 0
ARRIVAL = 1


class ScriptedArrival(NamedTuple):
    time: float
    ttype: int
    demand: int


@dataclass
class MetricsAccumulator:
    """Per-episode counters; a committed task later lost to a crash moves to crashed."""

    total_tasks: int = 0
    committed_tasks: int = 0
    crashed_tasks: int = 0
    crash_events: int = 0
    cumulative_reward: float = 0.0
    utility_earned: float = 0.0
    penalties: float = 0.0
    lost_utility: float = 0.0

    @property
    def crash_rate(self) -> float:
        return self.crashed_tasks / self.total_tasks if self.total_tasks else 0.0


@dataclass
class StepOutcome:
    reward: float
    next_state: np.ndarray
    done: bool
    info: Dict[str, float] = field(default_factory=dict)


@dataclass
class TraceRow:
    step: int
    time: float
    task_id: int
    ttype: int
    demand: int
    action: int
    reward: float
    crashed: bool
    server_loads: Tuple[int, ...]


class EdgeEnv:
    """Edge cluster environment.

    :param config: cluster configuration; the cluster itself is drawn from
        `config.seed` unless given explicitly.
    :param cluster: a prebuilt cluster (scripted instances, snapshots).
    :param arrivals: optional scripted arrival list replacing the Poisson stream.
    :param record_trace: keep one `TraceRow` per step.
    """

    def __init__(
        self,
        config: ClusterConfig,
        cluster: Optional[Cluster] = None,
        arrivals: Optional[Sequence[ScriptedArrival]] = None,
        record_trace: bool = False,
    ):
        self.config = config.validate()
        self.cluster = cluster if cluster is not None else make_cluster(config)
        self.n_actions = len(self.cluster.models)
        self._scripted = None if arrivals is None else sorted(arrivals, key=lambda a: a.time)
        self.record_trace = record_trace
        self.trace: List[TraceRow] = []
        self.metrics = MetricsAccumulator()
        self.now = 0.0
        self.pending: Optional[Task] = None
        self.done = True
        self._rng = np.random.default_rng(0)
        self._events: List[Tuple[float, int, int, int]] = []
        self._next_id = 0
        self._steps = 0
        capacities = [s.capacity for s in self.servers]
        self._cap_norm = float(max([config.capacity_range[1]] + capacities))

    @property
    def servers(self):
        return self.cluster.servers

    @property
    def state_dim(self) -> int:
        return self.config.k_types + 2 + 3 * len(self.servers)

    def reset(self, seed: int) -> np.ndarray:
        self._rng = np.random.default_rng(seed)
        self.cluster.clear()
        self.metrics = MetricsAccumulator()
        self.trace = []
        self.now = 0.0
        self.pending = None
        self.done = False
        self._events = []
        self._next_id = 0
        self._steps = 0
        self._schedule_arrival()
        self._advance()
        return self.state()

    # -- event clock --------------------------------------------------------

    def _budget_left(self) -> bool:
        if self._scripted is not None:
            return self._next_id < len(self._scripted)
        return self.config.max_tasks is None or self._next_id < self.config.max_tasks

    def _schedule_arrival(self) -> None:
        if not self._budget_left():
            return
        if self._scripted is not None:
            t = self._scripted[self._next_id].time
        else:
            t = self.now + next_interarrival(self._rng, self.config.lambda_)
        if t < self.config.horizon:
            heapq.heappush(self._events, (t, ARRIVAL, self._next_id, -1))

    def _spawn(self, t: float, task_id: int) -> Task:
        if self._scripted is None:
            return spawn_task(self._rng, self.config, t, task_id)
        a = self._scripted[task_id]
        return Task(task_id, a.ttype, a.demand, t, self.config.duration_per_step * a.demand)

    def _advance(self) -> None:
        """Process completions until the next arrival; flag done when none is left."""
        while self._events and self._events[0][0] <= self.config.horizon:
            t, kind, task_id, server_id = heapq.heappop(self._events)
            if kind == COMPLETION:
                # crashed tasks leave stale completion events behind
                self.servers[server_id].in_flight.pop(task_id, None)
                self.now = max(self.now, t)
                continue
            self.now = t
            self.pending = self._spawn(t, task_id)
            self._next_id = task_id + 1
            return
        self.pending = None
        self.done = True
        if self._budget_left():
            # the arrival stream ran past the horizon
            self.now = max(self.now, self.config.horizon)

    # -- observation ----------------------------------------------------------

    def state(self) -> np.ndarray:
        return encode_state(self, self.pending)

    def feasible_actions(self) -> np.ndarray:
        if self.pending is None:
            raise ContractViolation("no pending task")
        demand = self.pending.demand
        fits = [s.fits(demand) for s in self.servers]
        return np.array([fits[m.server_id] for m in self.cluster.models], dtype=bool)

    # -- transition -----------------------------------------------------------

    def step(self, action: int) -> StepOutcome:
        if self.done or self.pending is None:
            raise ContractViolation("step called on a finished episode; call reset first")
        if not 0 <= int(action) < self.n_actions:
            raise ContractViolation(f"action {action} out of range [0, {self.n_actions})")
        action = int(action)
        task = self.pending
        profile = self.cluster.models[action]
        server = self.servers[profile.server_id]
        gain = utility(profile, task, self.config)
        m = self.metrics
        m.total_tasks += 1

        if server.fits(task.demand):
            task.server_assigned = server.server_id
            task.model_assigned = action
            task.start_time = self.now
            task.committed_utility = gain
            server.in_flight[task.id] = task
            heapq.heappush(self._events, (task.end_time, COMPLETION, task.id, server.server_id))
            reward = gain
            crashed = False
            n_terminated = 0
            lost = 0.0
            m.committed_tasks += 1
            m.utility_earned += gain
        else:
            reward = -penalty(server, self.now, self.config)
            n_terminated = len(server.in_flight)
            lost = sum(t.committed_utility for t in server.in_flight.values()) + gain
            crashed = True
            lg.debug(
                "server %d crashed at t=%.1f: %d in flight, demand %d over capacity %d",
                server.server_id, self.now, n_terminated, task.demand, server.capacity,
            )
            server.in_flight.clear()
            m.crash_events += 1
            m.crashed_tasks += 1 + n_terminated
            m.committed_tasks -= n_terminated
            m.penalties -= reward
            m.lost_utility += lost
        m.cumulative_reward += reward

        if self.record_trace:
            self.trace.append(
                TraceRow(
                    self._steps, self.now, task.id, task.ttype, task.demand, action, reward,
                    crashed, tuple(s.load for s in self.servers),
                )
            )
        self._steps += 1
        self._schedule_arrival()
        self._advance()
        info = {
            "crashed": crashed,
            "n_terminated": n_terminated,
            "utility_earned": gain if not crashed else 0.0,
            "utility_lost": lost,
        }
        return StepOutcome(reward, self.state(), self.done, info)


def encode_state(env: EdgeEnv, task: Optional[Task]) -> np.ndarray:
    """[one-hot type] [demand] [duration] then per server [capacity, remaining, models]."""
    cfg = env.config
    out = np.zeros(env.state_dim, dtype=np.float64)
    max_demand = cfg.demand_range[1]
    if task is not None:
        out[task.ttype] = 1.0
        out[cfg.k_types] = task.demand / max_demand
        out[cfg.k_types + 1] = task.duration / (max_demand * cfg.duration_per_step)
    base = cfg.k_types + 2
    for i, server in enumerate(env.servers):
        out[base + 3 * i] = server.capacity / env._cap_norm
        out[base + 3 * i + 1] = server.remaining_fraction
        out[base + 3 * i + 2] = env.cluster.models_on(i) / cfg.models_per_server
    return out
