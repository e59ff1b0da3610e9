from dataclasses import replace

import pandas as pd
import pytest
import torch

from aigc.adsac import sweep
from aigc.adsac.artifacts import write_yaml
from aigc.adsac.baselines import MlpPolicy
from aigc.adsac.checkpoint import save
from aigc.adsac.config import HEURISTIC_TAGS, SweepSpec, TrainerConfig
from aigc.adsac.exceptions import CheckpointError, InvalidConfig, MissingCheckpoint
from aigc.adsac.sweep import Cell, aggregate, cells, load_policy, run_cell, run_sweep


@pytest.fixture
def cluster(small_config):
    return replace(small_config, horizon=1500.0)


def test_cells_cover_the_matrix():
    todo = cells(SweepSpec())
    assert len(todo) == 4 * 3 * 3
    assert todo[0] == Cell("random", 0.001, 0)
    assert todo[-1] == Cell("prophet", 0.002, 2)


def test_default_heuristic_sweep_shape(cluster):
    table, means = run_sweep(SweepSpec(lambdas=(0.005, 0.01, 0.02), episodes=1), cluster,
                             TrainerConfig())
    assert len(table) == 36
    assert list(table.columns) == list(sweep.SWEEP_COLUMNS)
    assert len(means) == len(HEURISTIC_TAGS) * 3
    assert list(means.columns) == list(sweep.MEAN_COLUMNS)
    assert table["crash_rate"].between(0.0, 1.0).all()


def test_cell_is_reproducible(cluster):
    cell = Cell("random", 0.01, 1)
    assert run_cell(cell, cluster, TrainerConfig(), 2) == run_cell(cell, cluster,
                                                                    TrainerConfig(), 2)


def test_cluster_is_fixed_across_seeds(cluster, monkeypatch):
    seen = []
    real = sweep.make_cluster

    def spy(config):
        built = real(config)
        seen.append(built.snapshot())
        return built

    monkeypatch.setattr(sweep, "make_cluster", spy)
    run_cell(Cell("prophet", 0.01, 0), cluster, TrainerConfig(), 1)
    run_cell(Cell("prophet", 0.02, 4), cluster, TrainerConfig(), 1)
    assert seen[0] == seen[1]


def test_aggregate_means_per_policy_and_lambda():
    table = pd.DataFrame(
        [
            ("random", 0.1, 0, 1.0, 0.5),
            ("random", 0.1, 1, 3.0, 0.3),
            ("prophet", 0.1, 0, 5.0, 0.0),
        ],
        columns=list(sweep.SWEEP_COLUMNS),
    )
    means = aggregate(table)
    assert means.to_dict("records") == [
        {"policy": "random", "lambda": 0.1, "test_reward": 2.0, "crash_rate": 0.4},
        {"policy": "prophet", "lambda": 0.1, "test_reward": 5.0, "crash_rate": 0.0},
    ]


def test_missing_checkpoint_names_the_cell(cluster):
    spec = SweepSpec(lambdas=(0.01,), policies=("random", "adsac"), seeds=1, episodes=1)
    with pytest.raises(MissingCheckpoint, match="policy=adsac, lambda=0.01, seed=0"):
        run_sweep(spec, cluster, TrainerConfig())


def test_invalid_spec(cluster):
    with pytest.raises(InvalidConfig, match="unknown policies"):
        run_sweep(SweepSpec(policies=("greedy",)), cluster, TrainerConfig())


def trained_mlp(tmp_path, cluster, hidden=16, lam=0.01):
    torch.manual_seed(0)
    policy = MlpPolicy(cluster.state_dim, cluster.n_models, hidden)
    path = tmp_path / "policy.ckpt"
    save(path, policy)
    write_yaml(tmp_path / "manifest.yaml", {"config": {"hidden": hidden, "lambda": lam}})
    return policy, path


def test_load_policy_takes_architecture_from_manifest(tmp_path, cluster):
    policy, path = trained_mlp(tmp_path, cluster)
    loaded = load_policy("sac_mlp", path, cluster, TrainerConfig())
    for p, q in zip(policy.parameters(), loaded.parameters()):
        assert torch.equal(p, q)


def test_load_policy_without_manifest_uses_trainer(tmp_path, cluster):
    _, path = trained_mlp(tmp_path, cluster)
    (tmp_path / "manifest.yaml").unlink()
    with pytest.raises(CheckpointError, match="^sac_mlp: "):
        load_policy("sac_mlp", path, cluster, TrainerConfig())
    assert load_policy("sac_mlp", path, cluster, TrainerConfig(hidden=16)) is not None


def test_learned_cell_with_checkpoint(tmp_path, cluster, caplog):
    _, path = trained_mlp(tmp_path, cluster, lam=0.02)
    row = run_cell(Cell("sac_mlp", 0.01, 0), cluster, TrainerConfig(), 1, str(path))
    assert row["policy"] == "sac_mlp"
    assert 0.0 <= row["crash_rate"] <= 1.0
    assert any("trained at lambda=0.02" in m for m in caplog.messages)


def test_load_policy_rejects_heuristic(tmp_path, cluster):
    with pytest.raises(InvalidConfig):
        load_policy("prophet", tmp_path / "x.ckpt", cluster, TrainerConfig())


def test_workers_match_serial(cluster):
    spec = SweepSpec(lambdas=(0.01,), policies=("random", "round_robin"), seeds=2, episodes=1)
    serial, _ = run_sweep(spec, cluster, TrainerConfig())
    parallel, _ = run_sweep(replace(spec, workers=2), cluster, TrainerConfig())
    pd.testing.assert_frame_equal(serial, parallel)


@pytest.mark.slow
def test_random_crash_rate_grows_with_load(cluster):
    spec = SweepSpec(lambdas=(0.002, 0.02), policies=("random",), seeds=2, episodes=3)
    _, means = run_sweep(spec, replace(cluster, horizon=20_000.0), TrainerConfig())
    low, high = means["crash_rate"]
    assert low < high
