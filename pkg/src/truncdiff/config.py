"""TOML experiment configuration with strict key checking.

Every table rejects unknown keys so a typo in a sweep definition fails
loudly instead of silently falling back to a default. See README.md for the
full schema.
"""
from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .coarse import KINDS as COARSE_KINDS
from .coarse import CoarseGenerator
from .diffusion import SAMPLERS
from .exceptions import ParameterError
from .mixture import GaussianMixture
from .network import LR_DECAYS
from .schedule import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_T, NoiseSchedule, make_linear_schedule


class ConfigError(ParameterError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END

    def build(self) -> NoiseSchedule:
        return make_linear_schedule(self.T, self.beta_start, self.beta_end)


@dataclass(frozen=True)
class DenoiserConfig:
    kind: str = "analytic"
    path: str | None = None


@dataclass(frozen=True)
class CoarseConfig:
    kind: str = "biased"
    offset: tuple = (0.5,)
    scale: float = 1.0


@dataclass(frozen=True)
class SweepConfig:
    sampler: str = "ddim"
    T_trunc: tuple = (0, 50, 100, 150, 1000)
    n_steps: tuple = (1, 2, 5, 10)


@dataclass(frozen=True)
class SampleConfig:
    sampler: str = "ddim"
    n_steps: int = 20
    T_trunc: int | None = None


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20000
    batch_size: int = 256
    learning_rate: float = 0.1
    lr_decay: str = "cosine"
    hidden_sizes: tuple = (64, 64, 64)
    t_max: int | None = None
    lock_base: bool = False
    checkpoint: str = "denoiser.npz"


@dataclass(frozen=True)
class GradcheckConfig:
    probe_count: int = 100
    batch_size: int = 16
    tolerance: float = 1e-4


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    target: dict | None
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    coarse: CoarseConfig = field(default_factory=CoarseConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)
    n_samples: int = 5000
    output: str = "results.csv"
    timing: bool = False
    digest: str = ""
    base_dir: Path = Path(".")

    def build_schedule(self) -> NoiseSchedule:
        return self.schedule.build()

    def build_target(self) -> GaussianMixture:
        if self.target is None:
            raise ConfigError("missing required table", "target")
        t = self.target
        try:
            return GaussianMixture(np.asarray(t["weights"], dtype=float),
                                   np.asarray(t["means"], dtype=float),
                                   np.asarray(t["variances"], dtype=float))
        except (ParameterError, ValueError, TypeError) as exc:
            raise ConfigError(str(exc), "target") from exc

    def build_coarse(self, target=None) -> CoarseGenerator:
        c = self.coarse
        gen = CoarseGenerator(target or self.build_target(), c.kind, offset=list(c.offset), scale=c.scale)
        try:
            return gen.fit()
        except ParameterError as exc:
            raise ConfigError(str(exc), "coarse") from exc

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def check_sweep(self):
        """Reject sweep cells that do not fit the schedule."""
        T = self.schedule.T
        for tt in self.sweep.T_trunc:
            if tt > T:
                raise ConfigError(f"T_trunc={tt} exceeds schedule T={T}", "sweep.T_trunc")
            for ns in self.sweep.n_steps:
                if self.sweep.sampler == "ddim" and 0 < tt < ns:
                    raise ConfigError(f"n_steps={ns} exceeds T_trunc={tt}", "sweep.n_steps")

    def sweep_cells(self):
        """``(T_trunc, n_steps)`` pairs in grid order; ``T_trunc = 0`` cells carry ``n_steps = 0``."""
        return [(tt, 0 if tt == 0 else ns) for tt in self.sweep.T_trunc for ns in self.sweep.n_steps]


_TOP_KEYS = {"seed", "target", "schedule", "denoiser", "coarse", "sweep", "sample", "train",
             "gradcheck", "n_samples", "output", "timing"}


def _check_keys(table, allowed, where):
    if not isinstance(table, dict):
        raise ConfigError("expected a table", where)
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown key (allowed: {', '.join(sorted(allowed))})", prefix + unknown[0])


def _int(value, key, low=None, high=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", key)
    if (low is not None and value < low) or (high is not None and value > high):
        raise ConfigError(f"value {value} out of range [{low}, {high}]", key)
    return value


def _real(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", key)
    return float(value)


def _bool(value, key):
    if not isinstance(value, bool):
        raise ConfigError(f"expected a boolean, got {value!r}", key)
    return value


def _int_list(value, key, low=None):
    if not isinstance(value, list) or not value:
        raise ConfigError("expected a non-empty list of integers", key)
    return tuple(_int(v, key, low=low) for v in value)


def _section(raw, name, cls, converters):
    table = raw.get(name, {})
    _check_keys(table, converters, name)
    kwargs = {k: conv(table[k], f"{name}.{k}") for k, conv in converters.items() if k in table}
    return cls(**kwargs)


def parse_config(raw: dict, *, digest="", base_dir=Path("."), require_target=True) -> ExperimentConfig:
    _check_keys(raw, _TOP_KEYS, "")
    if "seed" in raw:
        seed = _int(raw["seed"], "seed", low=0, high=2 ** 64 - 1)
    elif require_target:
        raise ConfigError("missing required key", "seed")
    else:
        seed = 0
    target = raw.get("target")
    if target is None and require_target:
        raise ConfigError("missing required table", "target")
    if target is not None:
        _check_keys(target, {"weights", "means", "variances"}, "target")
        for k in ("weights", "means", "variances"):
            if k not in target:
                raise ConfigError("missing required key", f"target.{k}")

    schedule = _section(raw, "schedule", ScheduleConfig, {
        "T": lambda v, k: _int(v, k, low=1), "beta_start": _real, "beta_end": _real})
    try:
        sched = schedule.build()
    except ParameterError as exc:
        raise ConfigError(str(exc), "schedule") from exc

    def _kind(choices):
        def conv(v, k):
            if v not in choices:
                raise ConfigError(f"must be one of {list(choices)}, got {v!r}", k)
            return v
        return conv

    denoiser = _section(raw, "denoiser", DenoiserConfig, {
        "kind": _kind(("analytic", "checkpoint")), "path": lambda v, k: str(v)})
    if denoiser.kind == "checkpoint" and not denoiser.path:
        raise ConfigError("checkpoint denoiser needs a path", "denoiser.path")

    def _offset(v, k):
        if isinstance(v, list):
            return tuple(_real(x, k) for x in v)
        return (_real(v, k),)

    coarse = _section(raw, "coarse", CoarseConfig, {
        "kind": _kind(COARSE_KINDS), "offset": _offset, "scale": _real})
    if coarse.kind == "overdispersed" and coarse.scale < 1:
        raise ConfigError(f"scale must be >= 1, got {coarse.scale}", "coarse.scale")

    sweep = _section(raw, "sweep", SweepConfig, {
        "sampler": _kind(SAMPLERS),
        "T_trunc": lambda v, k: _int_list(v, k, low=0),
        "n_steps": lambda v, k: _int_list(v, k, low=1)})

    sample = _section(raw, "sample", SampleConfig, {
        "sampler": _kind(SAMPLERS), "n_steps": lambda v, k: _int(v, k, low=1),
        "T_trunc": lambda v, k: _int(v, k, low=0, high=sched.T)})

    train = _section(raw, "train", TrainConfig, {
        "steps": lambda v, k: _int(v, k, low=0),
        "batch_size": lambda v, k: _int(v, k, low=1),
        "learning_rate": _real,
        "lr_decay": _kind(LR_DECAYS),
        "hidden_sizes": lambda v, k: _int_list(v, k, low=1),
        "t_max": lambda v, k: _int(v, k, low=1, high=sched.T),
        "lock_base": _bool,
        "checkpoint": lambda v, k: str(v)})
    if train.learning_rate < 0:
        raise ConfigError("must be non-negative", "train.learning_rate")

    gradcheck = _section(raw, "gradcheck", GradcheckConfig, {
        "probe_count": lambda v, k: _int(v, k, low=1),
        "batch_size": lambda v, k: _int(v, k, low=1),
        "tolerance": _real})

    n_samples = _int(raw.get("n_samples", 5000), "n_samples", low=2)
    output = raw.get("output", "results.csv")
    if not isinstance(output, str) or not output:
        raise ConfigError("expected a path string", "output")
    timing = _bool(raw.get("timing", False), "timing")

    cfg = ExperimentConfig(seed=seed, target=target, schedule=schedule, denoiser=denoiser,
                           coarse=coarse, sweep=sweep, sample=sample, train=train,
                           gradcheck=gradcheck, n_samples=n_samples, output=output,
                           timing=timing, digest=digest, base_dir=base_dir)
    if "sweep" in raw:
        cfg.check_sweep()
    if target is not None:
        gm = cfg.build_target()
        if coarse.kind == "biased" and len(coarse.offset) not in (1, gm.dim):
            raise ConfigError(f"offset needs 1 or {gm.dim} entries", "coarse.offset")
    return cfg


def load_config(path, *, require_target=True) -> ExperimentConfig:
    """Read and validate a TOML config; parse errors report line and column."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        raw = tomllib.loads(data.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    digest = hashlib.sha256(data).hexdigest()[:12]
    return parse_config(raw, digest=digest, base_dir=path.parent, require_target=require_target)

