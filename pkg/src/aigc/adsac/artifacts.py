"""Run artifacts: CSV tables, cluster snapshots and manifests."""
import dataclasses
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Sequence, Union

import pandas as pd
import yaml

from aigc.adsac.cluster import Cluster
from aigc.adsac.env import TraceRow
from aigc.adsac.exceptions import InvalidConfig
from aigc.adsac.trainer import METRIC_COLUMNS, EpochRecord, EvalReport

lg = logging.getLogger(__name__)

PathLike = Union[str, Path]

EVAL_COLUMNS = (
    "policy",
    "episodes",
    "seed",
    "test_reward_mean",
    "test_reward_std",
    "crash_rate",
    "lost_utility",
)


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_table(path: PathLike, rows: Iterable[Mapping[str, Any]], columns: Sequence[str]) -> Path:
    frame = pd.DataFrame(list(rows), columns=list(columns))
    path = Path(path)
    frame.to_csv(path, index=False, encoding="utf-8", float_format="%.10g")
    lg.info("wrote %s (%d rows)", path, len(frame))
    return path


def write_metrics(path: PathLike, records: Iterable[EpochRecord]) -> Path:
    return write_table(path, (dataclasses.asdict(r) for r in records), METRIC_COLUMNS)


def eval_row(policy: str, report: EvalReport, seed: int) -> Dict[str, Any]:
    return {
        "policy": policy,
        "episodes": len(report.episodes),
        "seed": seed,
        "test_reward_mean": report.reward_mean,
        "test_reward_std": report.reward_std,
        "crash_rate": report.crash_rate,
        "lost_utility": report.lost_utility,
    }


def write_trace(path: PathLike, rows: Iterable[TraceRow], n_servers: int) -> Path:
    loads = [f"load_{i}" for i in range(n_servers)]
    columns = ["step", "time", "task_id", "ttype", "demand", "action", "reward", "crashed"] + loads
    flat = []
    for r in rows:
        d = dataclasses.asdict(r)
        d.update(zip(loads, d.pop("server_loads")))
        flat.append(d)
    return write_table(path, flat, columns)


def read_table(path: PathLike) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as e:
        raise InvalidConfig(f"cannot read table {str(path)!r}: {e}") from e


def write_yaml(path: PathLike, data: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(dict(data), sort_keys=False), encoding="utf-8")
    lg.info("wrote %s", path)
    return path


def read_yaml(path: PathLike) -> Dict[str, Any]:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as e:
        raise InvalidConfig(f"cannot read {str(path)!r}: {e}") from e
    if not isinstance(data, dict):
        raise InvalidConfig(f"{str(path)!r} is not a mapping")
    return data


def write_cluster(path: PathLike, cluster: Cluster) -> Path:
    return write_yaml(path, cluster.snapshot())


def read_cluster(path: PathLike) -> Cluster:
    return Cluster.from_snapshot(read_yaml(path))


def manifest(
    config_echo: Mapping[str, Any],
    seed: int,
    started: str,
    artifacts: Mapping[str, str],
    checkpoint_sha256: str,
    version: str,
) -> Dict[str, Any]:
    return {
        "version": version,
        "seed": seed,
        "started": started,
        "finished": utc_now(),
        "checkpoint_sha256": checkpoint_sha256,
        "artifacts": dict(artifacts),
        "config": dict(config_echo),
    }

