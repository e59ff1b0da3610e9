"""`adsac` command line: train, eval, sweep, oracle-check, report."""
import functools
import logging
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

import click

from aigc.adsac import __version__, oracle
from aigc.adsac.artifacts import eval_row, manifest, read_cluster, read_yaml, utc_now
from aigc.adsac.artifacts import EVAL_COLUMNS, write_cluster, write_metrics, write_table
from aigc.adsac.artifacts import write_trace, write_yaml
from aigc.adsac.baselines import make_agent
from aigc.adsac.checkpoint import file_digest, save
from aigc.adsac.cluster import Cluster, make_cluster
from aigc.adsac.config import HEURISTIC_TAGS, LEARNED_TAGS, POLICY_TAGS, ClusterConfig
from aigc.adsac.config import SweepSpec, config_echo, load_config, parse_assignments
from aigc.adsac.env import EdgeEnv
from aigc.adsac.exceptions import CheckpointError, Exit, InvalidConfig, MissingCheckpoint
from aigc.adsac.guard import guard
from aigc.adsac.report import plot_reward_curves, plot_sweep
from aigc.adsac.sweep import load_policy, run_sweep
from aigc.adsac.trainer import eval_seed, evaluate, run_episode, train

lg = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def command_guard(fn):
    """Run a subcommand under a guard that turns counted errors into exit status 1."""
    return guard(on_errors_raise=Exit(1), report_counts=True)(fn)


def _overrides(settings: Iterable[str], **flags) -> Dict[str, object]:
    out: Dict[str, object] = dict(parse_assignments(settings))
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _tagged_paths(pairs: Iterable[str], what: str) -> Dict[str, str]:
    out = {}
    for pair in pairs:
        tag, sep, path = pair.partition("=")
        if not sep:
            raise InvalidConfig(f"expected {what} as TAG=PATH, got {pair!r}")
        out[tag.strip()] = path.strip()
    return out


def _env_factory(config: ClusterConfig, cluster: Cluster, record_trace: bool = False):
    snapshot = cluster.snapshot()
    return lambda: EdgeEnv(config, Cluster.from_snapshot(snapshot), record_trace=record_trace)


config_option = click.option(
    "--config", "config_path", type=click.Path(dir_okay=False), default=None,
    help="Flat YAML file of config keys.",
)
set_option = click.option(
    "--set", "settings", multiple=True, metavar="KEY=VALUE", help="Override any config key.",
)


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log at DEBUG level.")
@click.option("-q", "--quiet", is_flag=True, help="Log warnings and errors only.")
def cli(verbose: bool, quiet: bool):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(format=LOG_FORMAT)
    logging.getLogger().setLevel(level)
    guard.reset_totals()


@cli.command("train")
@config_option
@set_option
@click.option("--policy", type=click.Choice(LEARNED_TAGS), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--steps-per-epoch", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--lambda", "lambda_", type=float, default=None, help="Task arrival rate.")
@click.option("--out", type=click.Path(file_okay=False), default="run", show_default=True)
@command_guard
def train_command(config_path, settings, policy, epochs, steps_per_epoch, seed, lambda_, out):
    """Train a learned policy and write its run directory."""
    overrides = _overrides(
        settings, policy=policy, epochs=epochs, steps_per_epoch=steps_per_epoch, seed=seed,
        **{"lambda": lambda_},
    )
    cluster_cfg, trainer_cfg = load_config(config_path, overrides)
    if not trainer_cfg.is_learned:
        raise InvalidConfig(
            f"train needs a learned policy, got {trainer_cfg.policy!r}; "
            f"valid tags: {', '.join(LEARNED_TAGS)}"
        )
    started = utc_now()
    run_dir = Path(out)
    run_dir.mkdir(parents=True, exist_ok=True)
    cluster = make_cluster(cluster_cfg)

    result = train(_env_factory(cluster_cfg, cluster), trainer_cfg)

    artifacts = {
        "metrics": write_metrics(run_dir / "metrics.csv", result.records),
        "cluster": write_cluster(run_dir / "cluster.yaml", cluster),
    }
    digest = save(run_dir / "policy.ckpt", result.policy)
    save(run_dir / "critics.ckpt", result.critics)
    artifacts["policy"] = run_dir / "policy.ckpt"
    artifacts["critics"] = run_dir / "critics.ckpt"
    last = result.records[-1] if result.records else None
    artifacts["summary"] = write_yaml(
        run_dir / "summary.yaml",
        {
            "policy": trainer_cfg.policy,
            "training_episodes": len(result.episode_rewards),
            "train_reward_final_10pct": result.train_reward,
            "eval_reward_mean": last.eval_reward_mean if last else None,
            "eval_reward_std": last.eval_reward_std if last else None,
            "crash_rate": last.crash_rate if last else None,
            "lost_utility": last.lost_utility if last else None,
        },
    )
    write_yaml(
        run_dir / "manifest.yaml",
        manifest(
            config_echo(cluster_cfg, trainer_cfg), trainer_cfg.seed, started,
            {k: p.name for k, p in artifacts.items()}, digest, __version__,
        ),
    )
    click.echo(str(run_dir))


def _eval_setup(config_path, settings, seed, lambda_, run_dir: Optional[str]):
    """Configs, cluster and checkpoints, taking a run directory's as the base when given."""
    base: Dict[str, object] = {}
    checkpoints: Dict[str, str] = {}
    cluster = None
    if run_dir is not None:
        run = Path(run_dir)
        recorded = read_yaml(run / "manifest.yaml")
        base = dict(recorded.get("config") or {})
        ckpt = run / "policy.ckpt"
        expected = recorded.get("checkpoint_sha256")
        if expected is not None and file_digest(ckpt) != expected:
            raise CheckpointError(f"{str(ckpt)!r} does not match the sha256 in its manifest")
        checkpoints[str(base.get("policy"))] = str(ckpt)
        cluster = read_cluster(run / "cluster.yaml")
    overrides = {**base, **_overrides(settings, seed=seed, **{"lambda": lambda_})}
    cluster_cfg, trainer_cfg = load_config(config_path, overrides)
    if cluster is None:
        cluster = make_cluster(cluster_cfg)
    return cluster_cfg, trainer_cfg, cluster, checkpoints


@cli.command("eval")
@config_option
@set_option
@click.option("--policy", "policies", multiple=True, type=click.Choice(POLICY_TAGS),
              help="Policy tag; repeat to compare several.")
@click.option("--checkpoint", "checkpoints", multiple=True, metavar="TAG=PATH")
@click.option("--run-dir", type=click.Path(file_okay=False, exists=True), default=None,
              help="Evaluate a training run with its own config, cluster and checkpoint.")
@click.option("--episodes", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--lambda", "lambda_", type=float, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Report CSV.")
@click.option("--trace", type=click.Path(dir_okay=False), default=None,
              help="Per-step CSV of the first evaluation episode (single policy).")
@command_guard
def eval_command(config_path, settings, policies, checkpoints, run_dir, episodes, seed,
                 lambda_, out, trace):
    """Evaluate policies with greedy actions on the evaluation seed block."""
    cluster_cfg, trainer_cfg, cluster, known = _eval_setup(
        config_path, settings, seed, lambda_, run_dir
    )
    known.update(_tagged_paths(checkpoints, "--checkpoint"))
    policies = policies or tuple(known) or HEURISTIC_TAGS
    if trace is not None and len(policies) != 1:
        raise InvalidConfig("--trace needs exactly one --policy")
    n_episodes = episodes if episodes is not None else trainer_cfg.eval_episodes
    factory = _env_factory(cluster_cfg, cluster)

    rows = []
    for tag in policies:
        network = None
        if tag in LEARNED_TAGS:
            if tag not in known:
                raise MissingCheckpoint(f"policy {tag!r} needs --checkpoint {tag}=PATH")
            network = load_policy(tag, Path(known[tag]), cluster_cfg, trainer_cfg)
        agent = make_agent(tag, seed=trainer_cfg.seed, policy=network)
        report = evaluate(agent, factory, n_episodes, trainer_cfg.seed)
        rows.append(eval_row(tag, report, trainer_cfg.seed))
        click.echo(
            f"{tag:12s} reward {report.reward_mean:10.3f} ± {report.reward_std:8.3f}  "
            f"crash rate {report.crash_rate:7.2%}  lost utility {report.lost_utility:9.3f}"
        )
        if trace is not None:
            env = _env_factory(cluster_cfg, cluster, record_trace=True)()
            run_episode(env, agent, eval_seed(trainer_cfg.seed, 0))
            write_trace(trace, env.trace, len(env.servers))
    if out is not None:
        write_table(out, rows, EVAL_COLUMNS)


def _floats(text: Optional[str]) -> Optional[Tuple[float, ...]]:
    if text is None:
        return None
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as e:
        raise InvalidConfig(f"expected comma-separated numbers, got {text!r}") from e


@cli.command("sweep")
@config_option
@set_option
@click.option("--lambdas", default=None, help="Comma-separated arrival rates.")
@click.option("--policy", "policies", multiple=True, type=click.Choice(POLICY_TAGS))
@click.option("--checkpoint", "checkpoints", multiple=True, metavar="TAG=PATH")
@click.option("--seeds", type=int, default=None, help="Seeds per cell.")
@click.option("--episodes", type=int, default=None, help="Evaluation episodes per cell.")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default="sweep", show_default=True)
@command_guard
def sweep_command(config_path, settings, lambdas, policies, checkpoints, seeds, episodes,
                  workers, out):
    """Compare policies over arrival rates; writes sweep.csv and sweep_mean.csv."""
    cluster_cfg, trainer_cfg = load_config(config_path, _overrides(settings))
    fields = {
        "lambdas": _floats(lambdas),
        "policies": tuple(policies) or None,
        "seeds": seeds,
        "episodes": episodes,
    }
    spec = SweepSpec(
        checkpoints=_tagged_paths(checkpoints, "--checkpoint"),
        workers=workers,
        **{k: v for k, v in fields.items() if v is not None},
    )
    table, means = run_sweep(spec, cluster_cfg, trainer_cfg)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_table(out_dir / "sweep.csv", table.to_dict("records"), table.columns)
    write_table(out_dir / "sweep_mean.csv", means.to_dict("records"), means.columns)
    click.echo(means.to_string(index=False))


@cli.command("oracle-check")
@click.option("--points", type=int, default=10, show_default=True,
              help="Random points per gradient check.")
@click.option("--samples", type=int, default=10_000, show_default=True,
              help="Chains drawn for the variance check.")
@command_guard
def oracle_check_command(points, samples):
    """Enumeration, zero-predictor variance and gradient checks; nonzero exit on failure."""
    checks = (
        ("tiny-instance enumeration", oracle.check_enumeration),
        ("zero-predictor variance",
         functools.partial(oracle.check_zero_predictor_variance, n=samples)),
        ("gradient checks", functools.partial(oracle.check_gradients, points=points)),
    )
    for name, ok, value in oracle.run_all(checks):
        click.echo(f"{'PASS' if ok else 'FAIL'} {name}: {value}")


@cli.command("report")
@click.option("--run", "runs", multiple=True, metavar="[LABEL=]DIR",
              help="Run directory to plot; repeat for several.")
@click.option("--sweep", "sweep_dir", type=click.Path(file_okay=False), default=None)
@click.option("--out", type=click.Path(file_okay=False), default="report", show_default=True)
@command_guard
def report_command(runs, sweep_dir, out):
    """Reward-curve and arrival-rate charts from run and sweep tables."""
    if not runs and sweep_dir is None:
        raise InvalidConfig("nothing to plot: give --run and/or --sweep")
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if runs:
        labelled = {}
        for item in runs:
            label, sep, path = item.partition("=")
            if not sep:
                label, path = Path(item).name, item
            labelled[label] = Path(path) / "metrics.csv"
        click.echo(str(plot_reward_curves(labelled, out_dir / "reward_curves.png")))
    if sweep_dir is not None:
        click.echo(str(plot_sweep(Path(sweep_dir) / "sweep_mean.csv", out_dir / "sweep.png")))


def main():
    cli(prog_name="adsac")


if __name__ == "__main__":
    main()
