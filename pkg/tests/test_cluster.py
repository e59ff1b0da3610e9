import numpy as np
import pytest

from aigc.adsac.cluster import Cluster, ModelProfile, Server, Task, make_cluster
from aigc.adsac.cluster import next_interarrival, penalty, spawn_task, task_progress, utility
from aigc.adsac.config import ClusterConfig
from aigc.adsac.exceptions import ContractViolation, InvalidConfig


def running(task_id, demand, start, duration):
    return Task(task_id, 0, demand, start, duration, server_assigned=0, start_time=start)


def test_same_seed_same_cluster():
    config = ClusterConfig(seed=7)
    assert make_cluster(config) == make_cluster(config)
    assert make_cluster(config, seed=8) != make_cluster(config)


def test_cluster_layout():
    cluster = make_cluster(ClusterConfig())
    assert len(cluster.servers) == 5
    assert [m.server_id for m in cluster.models] == [m // 4 for m in range(20)]
    assert cluster.utility_table.shape == (20, 4)
    assert ((cluster.utility_table >= 0) & (cluster.utility_table <= 1)).all()
    assert all(1500 <= s.capacity <= 3000 for s in cluster.servers)


def test_degenerate_capacity_range():
    cluster = make_cluster(ClusterConfig(capacity_range=(2000, 2000)))
    assert [s.capacity for s in cluster.servers] == [2000] * 5


def test_capacity_histogram_is_uniform():
    # 10^4 clusters of 5 servers, capacities pooled into 10 equal-width bins
    lo, hi = 1500, 3000
    capacities = np.concatenate([
        [s.capacity for s in make_cluster(ClusterConfig(), seed=42 + i).servers]
        for i in range(10_000)
    ])
    counts, _ = np.histogram(capacities, bins=10, range=(lo, hi + 1))
    widths = np.diff(np.linspace(lo, hi + 1, 11))
    expected = len(capacities) * widths / (hi + 1 - lo)
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 21.67  # 99th percentile, 9 degrees of freedom


def test_snapshot_restores_cluster():
    cluster = make_cluster(ClusterConfig(seed=5))
    assert Cluster.from_snapshot(cluster.snapshot()) == cluster


def test_interarrival_mean(rng):
    draws = [next_interarrival(rng, 1.0) for _ in range(100_000)]
    assert np.mean(draws) == pytest.approx(1.0, rel=0.02)


@pytest.mark.parametrize("rate", [0.0, -0.5])
def test_interarrival_needs_positive_rate(rng, rate):
    with pytest.raises(InvalidConfig):
        next_interarrival(rng, rate)


def test_spawn_task(rng):
    task = spawn_task(rng, ClusterConfig(), 10.0, 3)
    assert task.id == 3 and task.arrival_time == 10.0
    assert 100 <= task.demand <= 250
    assert task.duration == 150.0 * task.demand
    assert task.server_assigned is None


def test_spawn_duration_is_linear():
    config = ClusterConfig(demand_range=(200, 200))
    task = spawn_task(np.random.default_rng(0), config, 0.0, 0)
    assert task.duration == 30000.0


def test_spawn_type_frequencies(rng):
    config = ClusterConfig()
    types = np.array([spawn_task(rng, config, 0.0, i).ttype for i in range(10_000)])
    freqs = np.bincount(types, minlength=4) / len(types)
    assert np.allclose(freqs, 0.25, atol=0.02)


def test_spawn_after_horizon():
    config = ClusterConfig(horizon=100.0)
    with pytest.raises(ContractViolation):
        spawn_task(np.random.default_rng(0), config, 100.0, 0)


def test_utility():
    profile = ModelProfile(0, 0, (0.8, 0.1, 0.1, 0.1))
    task = Task(0, 0, 200, 0.0, 30000.0)
    assert utility(profile, task, ClusterConfig()) == pytest.approx(1.2, abs=1e-12)
    assert utility(profile, task, ClusterConfig(beta_mix=0.0)) == pytest.approx(0.4, abs=1e-12)


def test_penalty_cases():
    server = Server(0, 2000)
    assert penalty(server, 0.0, ClusterConfig()) == 1.0

    server.in_flight[0] = running(0, 100, start=0.0, duration=100.0)
    assert penalty(server, 50.0, ClusterConfig()) == pytest.approx(1.5)

    server.in_flight = {1: running(1, 100, 10.0, 50.0), 2: running(2, 100, 10.0, 80.0)}
    assert penalty(server, 10.0, ClusterConfig(penalty_p=2.0)) == pytest.approx(6.0)


def test_task_progress():
    task = running(0, 100, start=20.0, duration=40.0)
    assert task_progress(task, 20.0) == 0.0
    assert task_progress(task, 60.0) == 1.0
    assert task_progress(task, 30.0) == pytest.approx(0.25)
    with pytest.raises(ContractViolation):
        task_progress(Task(1, 0, 100, 0.0, 10.0), 5.0)


def test_server_accounting():
    server = Server(0, 2000)
    assert server.remaining_fraction == 1.0
    server.in_flight[0] = running(0, 500, 0.0, 10.0)
    assert server.load == 500
    assert server.remaining_fraction == 0.75
    assert server.fits(1500)
    assert not server.fits(1501)


def test_interarrival_variance(rng):
    draws = np.array([next_interarrival(rng, 0.002) for _ in range(100_000)])
    assert draws.min() > 0
    assert draws.var() == pytest.approx(1 / 0.002 ** 2, rel=0.03)


def test_task_progress_is_monotone_and_bounded():
    task = running(0, 100, start=250.0, duration=1700.0)
    clock = np.sort(np.random.default_rng(3).uniform(0.0, 3000.0, size=500))
    progress = [task_progress(task, t) for t in clock]
    assert all(0.0 <= g <= 1.0 for g in progress)
    assert all(b >= a for a, b in zip(progress, progress[1:]))
