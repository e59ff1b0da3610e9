"""Static charts from run and sweep tables."""
import logging
from pathlib import Path
from typing import Mapping, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from aigc.adsac.artifacts import read_table  # noqa: E402
from aigc.adsac.exceptions import InvalidConfig  # noqa: E402

lg = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _require(frame: pd.DataFrame, columns, source: PathLike) -> None:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise InvalidConfig(f"{str(source)!r} lacks columns {missing}")


def plot_reward_curves(runs: Mapping[str, PathLike], out: PathLike) -> Path:
    """Train and eval reward per epoch against environment steps, one line pair per run.

    :param runs: label -> metrics.csv path.
    """
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for label, path in runs.items():
        frame = read_table(path)
        _require(frame, ("env_steps", "train_reward_mean", "eval_reward_mean"), path)
        line, = ax.plot(frame["env_steps"], frame["eval_reward_mean"], label=f"{label} eval")
        ax.plot(
            frame["env_steps"], frame["train_reward_mean"],
            color=line.get_color(), linestyle="--", alpha=0.6, label=f"{label} train",
        )
    ax.set_xlabel("environment steps")
    ax.set_ylabel("episode reward")
    ax.grid(True, alpha=0.3)
    ax.legend()
    return _save(fig, out)


def plot_sweep(means: PathLike, out: PathLike) -> Path:
    """Test reward and crash rate against arrival rate, one line per policy."""
    frame = read_table(means)
    _require(frame, ("policy", "lambda", "test_reward", "crash_rate"), means)
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
    for policy, rows in frame.groupby("policy", sort=False):
        rows = rows.sort_values("lambda")
        top.plot(rows["lambda"], rows["test_reward"], marker="o", label=policy)
        bottom.plot(rows["lambda"], rows["crash_rate"], marker="o", label=policy)
    top.set_ylabel("test reward")
    bottom.set_ylabel("crash rate")
    bottom.set_xlabel("task arrival rate")
    for ax in (top, bottom):
        ax.grid(True, alpha=0.3)
    top.legend()
    return _save(fig, out)


def _save(fig, out: PathLike) -> Path:
    out = Path(out)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    lg.info("wrote %s", out)
    return out
