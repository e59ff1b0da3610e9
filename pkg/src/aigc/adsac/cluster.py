"""Edge cluster model: servers, deployed generative models, tasks and utilities."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from aigc.adsac.config import ClusterConfig
from aigc.adsac.exceptions import ContractViolation, InvalidConfig

lg = logging.getLogger(__name__)


@dataclass
class Task:
    id: int
    ttype: int
    demand: int
    arrival_time: float
    duration: float
    server_assigned: Optional[int] = None
    model_assigned: Optional[int] = None
    start_time: Optional[float] = None
    committed_utility: float = 0.0

    @property
    def end_time(self) -> float:
        if self.start_time is None:
            raise ContractViolation(f"task {self.id} is not assigned")
        return self.start_time + self.duration


@dataclass(frozen=True)
class ModelProfile:
    model_id: int
    server_id: int
    baseline_utility: Sequence[float]


@dataclass
class Server:
    server_id: int
    capacity: int
    in_flight: Dict[int, Task] = field(default_factory=dict)

    @property
    def load(self) -> int:
        return sum(t.demand for t in self.in_flight.values())

    @property
    def slack(self) -> int:
        return self.capacity - self.load

    @property
    def remaining_fraction(self) -> float:
        return self.slack / self.capacity

    def fits(self, demand: int) -> bool:
        return demand + self.load <= self.capacity


@dataclass
class Cluster:
    servers: List[Server]
    models: List[ModelProfile]

    @property
    def utility_table(self) -> np.ndarray:
        """Baseline utility Ū, shape (n_models, k_types)."""
        return np.array([m.baseline_utility for m in self.models], dtype=np.float64)

    def server_of(self, action: int) -> Server:
        return self.servers[self.models[action].server_id]

    def models_on(self, server_id: int) -> int:
        return sum(1 for m in self.models if m.server_id == server_id)

    def clear(self) -> None:
        for server in self.servers:
            server.in_flight.clear()

    def snapshot(self) -> dict:
        return {
            "servers": [{"server_id": s.server_id, "capacity": s.capacity} for s in self.servers],
            "models": [
                {
                    "model_id": m.model_id,
                    "server_id": m.server_id,
                    "baseline_utility": [float(u) for u in m.baseline_utility],
                }
                for m in self.models
            ],
        }

    @classmethod
    def from_snapshot(cls, data: dict) -> "Cluster":
        servers = [Server(int(s["server_id"]), int(s["capacity"])) for s in data["servers"]]
        models = [
            ModelProfile(int(m["model_id"]), int(m["server_id"]), tuple(m["baseline_utility"]))
            for m in data["models"]
        ]
        return cls(servers, models)


def make_cluster(config: ClusterConfig, seed: Optional[int] = None) -> Cluster:
    """Servers with uniform-integer capacities and a uniform [0, 1] utility table."""
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    lo, hi = config.capacity_range
    capacities = rng.integers(lo, hi, size=config.n_servers, endpoint=True)
    table = rng.uniform(0.0, 1.0, size=(config.n_models, config.k_types))
    servers = [Server(i, int(c)) for i, c in enumerate(capacities)]
    models = [
        ModelProfile(m, m // config.models_per_server, tuple(float(u) for u in table[m]))
        for m in range(config.n_models)
    ]
    return Cluster(servers, models)


def next_interarrival(rng: np.random.Generator, lambda_: float) -> float:
    if lambda_ <= 0:
        raise InvalidConfig(f"arrival rate must be > 0, got {lambda_}")
    return float(rng.exponential(1.0 / lambda_))


def spawn_task(rng: np.random.Generator, config: ClusterConfig, now: float, task_id: int) -> Task:
    if now >= config.horizon:
        raise ContractViolation(f"cannot spawn at {now}, horizon is {config.horizon}")
    ttype = int(rng.integers(0, config.k_types))
    lo, hi = config.demand_range
    demand = int(rng.integers(lo, hi, endpoint=True))
    return Task(task_id, ttype, demand, now, config.duration_per_step * demand)


def utility(profile: ModelProfile, task: Task, config: ClusterConfig) -> float:
    """β · Ū[model, type] + κ · demand."""
    if not 0 <= task.ttype < len(profile.baseline_utility):
        raise ContractViolation(f"task type {task.ttype} out of range")
    return config.beta_mix * profile.baseline_utility[task.ttype] + config.kappa * task.demand


def task_progress(task: Task, now: float) -> float:
    if task.start_time is None:
        raise ContractViolation(f"task {task.id} is not assigned")
    return min(max((now - task.start_time) / task.duration, 0.0), 1.0)


def penalty(server: Server, now: float, config: ClusterConfig) -> float:
    """p · (1 + Σ (1 − G)) over the tasks the server is running."""
    undone = sum(1.0 - task_progress(t, now) for t in server.in_flight.values())
    return config.penalty_p * (1.0 + undone)
