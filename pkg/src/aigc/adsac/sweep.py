"""Policy comparison over arrival rates and seeds."""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import pandas as pd
from torch import nn

from aigc.adsac.artifacts import read_yaml
from aigc.adsac.baselines import build_policy, make_agent
from aigc.adsac.checkpoint import load_into
from aigc.adsac.cluster import make_cluster
from aigc.adsac.config import LEARNED_TAGS, ClusterConfig, SweepSpec, TrainerConfig
from aigc.adsac.config import split_settings
from aigc.adsac.env import EdgeEnv
from aigc.adsac.exceptions import CheckpointError, InvalidConfig, MissingCheckpoint
from aigc.adsac.trainer import evaluate

lg = logging.getLogger(__name__)

SWEEP_COLUMNS = ("policy", "lambda", "seed", "test_reward", "crash_rate")
MEAN_COLUMNS = ("policy", "lambda", "test_reward", "crash_rate")

_ARCHITECTURE = (
    "diffusion_steps", "beta_lo", "beta_hi", "variance",
    "x_feature", "state_feature", "time_dim", "attn_dim", "hidden",
)


class Cell(NamedTuple):
    policy: str
    lambda_: float
    seed: int


def trained_settings(checkpoint: Path) -> Dict[str, Any]:
    """Config echo of the run that wrote `checkpoint`, if its manifest sits next to it."""
    manifest = Path(checkpoint).with_name("manifest.yaml")
    if not manifest.is_file():
        return {}
    return dict(read_yaml(manifest).get("config") or {})


def load_policy(
    tag: str, checkpoint: Path, cluster: ClusterConfig, trainer: TrainerConfig
) -> nn.Module:
    """Network for `tag` with the checkpoint's values.

    Architecture fields come from the run manifest when one is found beside
    the checkpoint, otherwise from `trainer`.
    """
    if tag not in LEARNED_TAGS:
        raise InvalidConfig(f"{tag!r} is not a learned policy")
    settings = trained_settings(checkpoint)
    _, trained = split_settings({k: v for k, v in settings.items() if k in _ARCHITECTURE})
    config = replace(trainer, policy=tag, **trained)
    policy = build_policy(config, cluster.state_dim, cluster.n_models)
    try:
        return load_into(checkpoint, policy)
    except CheckpointError as e:
        raise CheckpointError(f"{tag}: {e}") from e


def _warn_lambda_mismatch(cell: Cell, checkpoint: Path) -> None:
    trained = trained_settings(checkpoint).get("lambda")
    if trained is not None and float(trained) != cell.lambda_:
        lg.warning(
            "cell %s: checkpoint %s was trained at lambda=%s", cell, checkpoint, trained
        )


def run_cell(
    cell: Cell,
    cluster: ClusterConfig,
    trainer: TrainerConfig,
    episodes: int,
    checkpoint: Optional[str] = None,
) -> Dict[str, Any]:
    """Evaluate one (policy, λ, seed) cell on the cluster drawn from `cluster.seed`."""
    config = replace(cluster, lambda_=cell.lambda_).validate()
    policy = None
    if cell.policy in LEARNED_TAGS:
        if checkpoint is None:
            raise MissingCheckpoint(
                f"no checkpoint for learned policy {cell.policy!r} "
                f"(cell policy={cell.policy}, lambda={cell.lambda_}, seed={cell.seed})"
            )
        _warn_lambda_mismatch(cell, Path(checkpoint))
        policy = load_policy(cell.policy, Path(checkpoint), config, trainer)
    agent = make_agent(cell.policy, seed=cell.seed, policy=policy)
    report = evaluate(agent, lambda: EdgeEnv(config, make_cluster(config)), episodes, cell.seed)
    lg.info(
        "%s lambda=%g seed=%d: reward %.3f crash rate %.4f",
        cell.policy, cell.lambda_, cell.seed, report.reward_mean, report.crash_rate,
    )
    return {
        "policy": cell.policy,
        "lambda": cell.lambda_,
        "seed": cell.seed,
        "test_reward": report.reward_mean,
        "crash_rate": report.crash_rate,
    }


def cells(spec: SweepSpec) -> List[Cell]:
    return [
        Cell(policy, float(lam), seed)
        for policy in spec.policies
        for lam in spec.lambdas
        for seed in range(spec.seeds)
    ]


def _run_cell_args(args: Tuple) -> Dict[str, Any]:
    return run_cell(*args)


def run_sweep(
    spec: SweepSpec, cluster: ClusterConfig, trainer: TrainerConfig
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Every cell of the matrix, then the (policy, λ) means.

    Checkpoints are checked before any cell runs. With `spec.workers > 1`
    cells run in worker processes; rows come back in cell order either way.
    """
    spec.validate()
    todo = cells(spec)
    for cell in todo:
        if cell.policy in LEARNED_TAGS and cell.policy not in spec.checkpoints:
            raise MissingCheckpoint(
                f"no checkpoint for learned policy {cell.policy!r} "
                f"(cell policy={cell.policy}, lambda={cell.lambda_}, seed={cell.seed})"
            )
    args = [
        (cell, cluster, trainer, spec.episodes, spec.checkpoints.get(cell.policy))
        for cell in todo
    ]
    lg.info("sweep: %d cells on %d worker(s)", len(todo), spec.workers)
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            rows = list(pool.map(_run_cell_args, args))
    else:
        rows = [_run_cell_args(a) for a in args]
    table = pd.DataFrame(rows, columns=list(SWEEP_COLUMNS))
    return table, aggregate(table)


def aggregate(table: pd.DataFrame) -> pd.DataFrame:
    means = (
        table.groupby(["policy", "lambda"], sort=False)[["test_reward", "crash_rate"]]
        .mean()
        .reset_index()
    )
    return means[list(MEAN_COLUMNS)]
