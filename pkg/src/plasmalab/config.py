"""Run configuration: defaults, a key = value file format, environment overrides.

Precedence, lowest first: built-in defaults, config file, environment, command
line.  Everything is validated before any computation starts.

Config file format (one setting per line, ``#`` starts a comment)::

    dimension = 3
    exponent = 1.5
    grid = 1024
    lambda_max = 40          # absolute; omit for 3 * lambda_+
    lambda_step = 0.5        # omit for 40 evenly spaced points
    lambda_cap = 5           # sweep never goes past lambda_cap * lambda_+
    lmax = 2
    tol = 1e-10              # Newton tolerance
    out = results
    seed = 0
    workers = 2
    checks = disc_equality, sigma1_positive
    tol.multiplier_identity = 1e-9       # primary tolerance of a check
    tol.kernel_structure.t_image = 1e-6  # a named tolerance of a check

Environment: PLASMALAB_OUT sets the output directory, PLASMALAB_WORKERS the
number of worker processes.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .emden import critical_exponent

MIN_GRID = 32
MAX_GRID = 1 << 16
ENV_OUT = "PLASMALAB_OUT"
ENV_WORKERS = "PLASMALAB_WORKERS"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    dimension: int = 2
    exponent: float = 2.0
    grid: int = 1024
    lambda_max: float | None = None
    lambda_step: float | None = None
    lambda_cap: float = 5.0
    lmax: int = 2
    tol: float = 1e-10
    out: str = "plasmalab-out"
    seed: int = 0
    workers: int = 1
    checks: tuple[str, ...] | None = None
    tolerances: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        from .verify import CHECKS  # the registry defines the valid check ids

        N, p = self.dimension, self.exponent
        if N < 2:
            raise ConfigError(f"dimension must be >= 2, got {N}")
        if not 1.0 < p < critical_exponent(N):
            raise ConfigError(f"exponent must lie in (1, {critical_exponent(N)}) for dimension {N}, got {p}")
        if not MIN_GRID <= self.grid <= MAX_GRID:
            raise ConfigError(f"grid must lie in [{MIN_GRID}, {MAX_GRID}], got {self.grid}")
        if self.lambda_max is not None and self.lambda_max < 0:
            raise ConfigError(f"lambda_max must be >= 0, got {self.lambda_max}")
        if self.lambda_step is not None and self.lambda_step <= 0:
            raise ConfigError(f"lambda_step must be > 0, got {self.lambda_step}")
        if self.lambda_cap <= 0:
            raise ConfigError(f"lambda_cap must be > 0, got {self.lambda_cap}")
        if self.lmax < 2:
            raise ConfigError(f"lmax must be >= 2, got {self.lmax}")
        if not 0 < self.tol <= 1e-4:
            raise ConfigError(f"tol must lie in (0, 1e-4], got {self.tol}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.checks is not None:
            unknown = [c for c in self.checks if c not in CHECKS]
            if unknown:
                raise ConfigError(f"unknown check(s): {', '.join(unknown)}")
        for key, value in self.tolerances.items():
            check, _, name = key.partition(".")
            if check not in CHECKS:
                raise ConfigError(f"tolerance for unknown check {check!r}")
            if name and name not in CHECKS[check].tolerances:
                raise ConfigError(f"check {check!r} has no tolerance named {name!r}")
            if not value >= 0:
                raise ConfigError(f"tolerance {key} must be >= 0, got {value}")
        return self

    @property
    def out_dir(self) -> Path:
        return Path(self.out)


def _convert(name: str, raw: str):
    raw = raw.strip()
    try:
        if name in ("dimension", "grid", "lmax", "seed", "workers"):
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        if name in ("exponent", "lambda_cap", "tol"):
            return float(raw)
        if name in ("lambda_max", "lambda_step"):
            return None if raw.lower() in ("", "none", "auto") else float(raw)
        if name == "checks":
            items = tuple(c.strip() for c in raw.split(",") if c.strip())
            return items or None
        if name == "out":
            return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    raise ConfigError(f"unknown setting {name!r}")


_FIELDS = {f.name for f in fields(RunConfig)} - {"tolerances"}


def parse_settings(lines) -> dict:
    """Parse key = value lines into a dict of typed settings."""
    settings: dict = {}
    tolerances: dict = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key = key.strip().replace("-", "_")
        if key.startswith("tol."):
            try:
                tolerances[key[4:]] = float(value)
            except ValueError:
                raise ConfigError(f"line {lineno}: bad tolerance {value.strip()!r}") from None
        elif key in _FIELDS:
            settings[key] = _convert(key, value)
        else:
            raise ConfigError(f"line {lineno}: unknown setting {key!r}")
    if tolerances:
        settings["tolerances"] = tolerances
    return settings


def read_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_settings(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None


def env_settings(env=None) -> dict:
    env = os.environ if env is None else env
    out = {}
    if env.get(ENV_OUT):
        out["out"] = env[ENV_OUT]
    if env.get(ENV_WORKERS):
        out["workers"] = _convert("workers", env[ENV_WORKERS])
    return out


def build_config(file: str | None = None, env=None, **overrides) -> RunConfig:
    """Merge defaults, file, environment and explicit overrides (None values are ignored)."""
    cfg = RunConfig()
    layers = [read_config_file(file) if file else {}, env_settings(env)]
    layers.append({k: v for k, v in overrides.items() if v is not None})
    tolerances: dict = {}
    for layer in layers:
        layer = dict(layer)
        tolerances.update(layer.pop("tolerances", {}))
        unknown = set(layer) - _FIELDS
        if unknown:
            raise ConfigError(f"unknown setting(s): {', '.join(sorted(unknown))}")
        cfg = replace(cfg, **layer)
    return replace(cfg, tolerances=tolerances).validate()
