"""Run configuration: cluster and trainer settings, file/env/flag layering."""
import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Union

import yaml

from aigc.adsac.exceptions import InvalidConfig

lg = logging.getLogger(__name__)

ENV_PREFIX = "ADSAC_"

HEURISTIC_TAGS = ("random", "round_robin", "crash_avoid", "prophet")
LEARNED_TAGS = ("sac_mlp", "dsac", "adsac")
POLICY_TAGS = HEURISTIC_TAGS + LEARNED_TAGS

VARIANCE_KINDS = ("beta", "posterior")


def _check(problems: List[str], ok: bool, message: str) -> None:
    if not ok:
        problems.append(message)


def _raise_if(problems: List[str], what: str) -> None:
    if problems:
        raise InvalidConfig(f"invalid {what}: " + "; ".join(problems))


@dataclass(frozen=True)
class ClusterConfig:
    n_servers: int = 5
    models_per_server: int = 4
    k_types: int = 4
    demand_range: Tuple[int, int] = (100, 250)
    capacity_range: Tuple[int, int] = (1500, 3000)
    lambda_: float = 0.0015
    horizon: float = 1e6
    beta_mix: float = 1.0
    kappa: float = 0.002
    penalty_p: float = 1.0
    duration_per_step: float = 150.0
    max_tasks: Optional[int] = None
    seed: int = 0

    @property
    def n_models(self) -> int:
        return self.n_servers * self.models_per_server

    @property
    def state_dim(self) -> int:
        return self.k_types + 2 + 3 * self.n_servers

    def validate(self) -> "ClusterConfig":
        problems: List[str] = []
        _check(problems, self.n_servers >= 1, "n_servers must be >= 1")
        _check(problems, self.models_per_server >= 1, "models_per_server must be >= 1")
        _check(problems, self.k_types >= 1, "k_types must be >= 1")
        lo, hi = self.demand_range
        _check(problems, 0 < lo <= hi, f"demand_range {self.demand_range} is empty")
        lo, hi = self.capacity_range
        _check(problems, 0 < lo <= hi, f"capacity_range {self.capacity_range} is empty")
        _check(problems, self.lambda_ > 0, f"lambda must be > 0, got {self.lambda_}")
        _check(problems, self.horizon > 0, f"horizon must be > 0, got {self.horizon}")
        _check(problems, self.duration_per_step > 0, "duration_per_step must be > 0")
        _check(problems, self.penalty_p >= 0, "penalty_p must be >= 0")
        _check(
            problems,
            self.max_tasks is None or self.max_tasks >= 1,
            "max_tasks must be None or >= 1",
        )
        _raise_if(problems, "cluster config")
        return self


@dataclass(frozen=True)
class TrainerConfig:
    policy: str = "adsac"
    gamma: float = 0.95
    tau: float = 0.005
    alpha_entropy: float = 0.05
    lr_policy: float = 1e-4
    lr_critic: float = 1e-3
    batch: int = 128
    buffer_capacity: int = 100_000
    warmup_steps: int = 2000
    epochs: int = 1000
    steps_per_epoch: int = 1000
    updates_per_step: int = 1
    eval_episodes: int = 5
    eval_every: int = 1
    diffusion_steps: int = 5
    beta_lo: float = 0.05
    beta_hi: float = 0.5
    variance: str = "beta"
    x_feature: int = 32
    state_feature: int = 64
    time_dim: int = 16
    attn_dim: int = 32
    hidden: int = 256
    seed: int = 0

    @property
    def is_learned(self) -> bool:
        return self.policy in LEARNED_TAGS

    def validate(self) -> "TrainerConfig":
        problems: List[str] = []
        if self.policy not in POLICY_TAGS:
            problems.append(
                f"unknown policy {self.policy!r}, valid tags: {', '.join(POLICY_TAGS)}"
            )
        _check(problems, 0 < self.gamma < 1, "gamma must be in (0, 1)")
        _check(problems, 0 < self.tau <= 1, "tau must be in (0, 1]")
        _check(problems, self.alpha_entropy >= 0, "alpha_entropy must be >= 0")
        _check(problems, self.lr_policy > 0 and self.lr_critic > 0, "learning rates must be > 0")
        _check(problems, self.batch >= 1, "batch must be >= 1")
        _check(problems, self.batch <= self.buffer_capacity, "batch must be <= buffer_capacity")
        _check(problems, self.warmup_steps >= 0, "warmup_steps must be >= 0")
        _check(problems, self.epochs >= 0, "epochs must be >= 0")
        _check(problems, self.steps_per_epoch >= 1, "steps_per_epoch must be >= 1")
        _check(problems, self.updates_per_step >= 0, "updates_per_step must be >= 0")
        _check(problems, self.eval_episodes >= 1, "eval_episodes must be >= 1")
        _check(problems, self.eval_every >= 1, "eval_every must be >= 1")
        _check(problems, self.diffusion_steps >= 1, "diffusion_steps must be >= 1")
        _check(
            problems,
            0 < self.beta_lo <= self.beta_hi < 1,
            f"need 0 < beta_lo <= beta_hi < 1, got [{self.beta_lo}, {self.beta_hi}]",
        )
        _check(
            problems, self.variance in VARIANCE_KINDS, f"variance must be one of {VARIANCE_KINDS}"
        )
        _check(problems, self.time_dim % 2 == 0, "time_dim must be even")
        _raise_if(problems, "trainer config")
        return self


@dataclass(frozen=True)
class SweepSpec:
    lambdas: Tuple[float, ...] = (0.001, 0.0015, 0.002)
    policies: Tuple[str, ...] = HEURISTIC_TAGS
    seeds: int = 3
    episodes: int = 5
    checkpoints: Mapping[str, str] = field(default_factory=dict)
    workers: int = 1

    def validate(self) -> "SweepSpec":
        problems: List[str] = []
        _check(problems, bool(self.lambdas), "lambdas must be nonempty")
        _check(problems, all(v > 0 for v in self.lambdas), "every lambda must be > 0")
        _check(problems, bool(self.policies), "policies must be nonempty")
        unknown = [p for p in self.policies if p not in POLICY_TAGS]
        _check(
            problems,
            not unknown,
            f"unknown policies {unknown}, valid tags: {', '.join(POLICY_TAGS)}",
        )
        _check(problems, self.seeds >= 1, "seeds must be >= 1")
        _check(problems, self.episodes >= 1, "episodes must be >= 1")
        _check(problems, self.workers >= 1, "workers must be >= 1")
        _raise_if(problems, "sweep spec")
        return self


# `lambda` is a keyword; the file, env and flag spelling is `lambda`.
_ALIASES = {"lambda": "lambda_"}
_CLUSTER_FIELDS = {f.name: f for f in dataclasses.fields(ClusterConfig)}
_TRAINER_FIELDS = {f.name: f for f in dataclasses.fields(TrainerConfig)}


def external_name(name: str) -> str:
    return "lambda" if name == "lambda_" else name


def _coerce(name: str, default: Any, value: Any) -> Any:
    if isinstance(value, str):
        value = yaml.safe_load(value) if value.strip() else value
    try:
        if isinstance(default, bool):
            return bool(value)
        if isinstance(default, tuple):
            items = value.split(",") if isinstance(value, str) else list(value)
            return tuple(type(d)(v) for d, v in zip(default, items))
        if isinstance(default, int) and not isinstance(default, bool):
            if float(value) != int(float(value)):
                raise ValueError(f"{value!r} is not an integer")
            return int(float(value))
        if isinstance(default, float):
            return float(value)
        if default is None:
            return None if value in (None, "None", "null") else int(value)
        return str(value)
    except (TypeError, ValueError) as e:
        raise InvalidConfig(f"bad value for {external_name(name)!r}: {value!r} ({e})") from e


def split_settings(settings: Mapping[str, Any]) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """Route flat `key: value` settings to the cluster and trainer field sets."""
    cluster: Dict[str, Any] = {}
    trainer: Dict[str, Any] = {}
    unknown = []
    for key, value in settings.items():
        name = _ALIASES.get(key, key)
        hit = False
        if name in _CLUSTER_FIELDS:
            cluster[name] = _coerce(name, _CLUSTER_FIELDS[name].default, value)
            hit = True
        if name in _TRAINER_FIELDS:
            trainer[name] = _coerce(name, _TRAINER_FIELDS[name].default, value)
            hit = True
        if not hit:
            unknown.append(key)
    if unknown:
        raise InvalidConfig(f"unknown config keys: {', '.join(sorted(unknown))}")
    return cluster, trainer


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise InvalidConfig(f"cannot read config file {str(path)!r}: {e.strerror}") from e
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise InvalidConfig(f"config file {str(path)!r} is not valid YAML: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict) or any(isinstance(v, dict) for v in data.values()):
        raise InvalidConfig(f"config file {str(path)!r} must be a flat key: value mapping")
    return {str(k): v for k, v in data.items()}


def env_settings(environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    environ = os.environ if environ is None else environ
    known = {external_name(n) for n in list(_CLUSTER_FIELDS) + list(_TRAINER_FIELDS)}
    found = {}
    for key in known:
        var = ENV_PREFIX + key.upper()
        if var in environ:
            found[key] = environ[var]
    return found


def parse_assignments(pairs: Iterable[str]) -> Dict[str, str]:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise InvalidConfig(f"expected key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> Tuple[ClusterConfig, TrainerConfig]:
    """Defaults < config file < ADSAC_* environment < explicit overrides."""
    settings: Dict[str, Any] = {}
    if path is not None:
        settings.update(read_config_file(path))
    settings.update(env_settings(environ))
    settings.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cluster_kw, trainer_kw = split_settings(settings)
    cluster = ClusterConfig(**cluster_kw).validate()
    trainer = TrainerConfig(**trainer_kw).validate()
    lg.debug("loaded config: %s / %s", cluster, trainer)
    return cluster, trainer


def config_echo(cluster: ClusterConfig, trainer: TrainerConfig) -> Dict[str, Any]:
    """Flat mapping of every field, spelled as in config files."""
    echo: Dict[str, Any] = {}
    for cfg in (cluster, trainer):
        for name, value in dataclasses.asdict(cfg).items():
            echo[external_name(name)] = list(value) if isinstance(value, tuple) else value
    return echo
