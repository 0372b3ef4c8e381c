"""
Configuration

Flat key=value settings. Sources, lowest precedence first:

    1. defaults below
    2. HEATSTAB_<KEY> environment variables (a local .env is loaded by the CLI)
    3. the --config file, read with python-dotenv
    4. --set key=value overrides
"""

import os
from dataclasses import dataclass, fields, replace
from typing import Dict, Iterable, Mapping, Optional

from dotenv import dotenv_values

from heatstab.errors import ConfigError, GridError

ENV_PREFIX = "HEATSTAB_"

INITIAL_KINDS = ("phi1", "random", "zero")
OBSERVER_INITS = ("matched", "zero", "random")
EIGENSOLVERS = ("auto", "dense", "shift-invert")

ALIASES = {"boundary": "boundary_config"}


@dataclass(frozen=True)
class Config:
    nx: int = 31
    ny: int = 31
    Lx: float = 1.0
    Ly: float = 1.0
    boundary_config: str = "B"
    mu: float = 13.0
    alpha: float = 1.0
    modes: int = 12
    lqr_q: float = 1.0
    lqr_r: float = 1.0
    dt: float = 1e-3
    tmax: float = 10.0
    seed: int = 0
    window: float = 0.5
    record_every: int = 1
    initial: str = "phi1"
    observer_init: str = "zero"
    eigensolver: str = "auto"
    # tolerance overrides; None means the module default
    eps_res: Optional[float] = None
    rank_tol: Optional[float] = None
    cluster_tol: Optional[float] = None
    sing_tol: float = 1e-10
    pole_margin: float = 1e-9

    @property
    def theta(self) -> float:
        return -self.alpha - self.mu


_FIELDS = {f.name.lower(): f for f in fields(Config)}


def _convert(key: str, raw) -> object:
    f = _FIELDS[key]
    text = str(raw).strip()
    kind = f.type
    try:
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
        if kind in (Optional[float], "Optional[float]"):
            return None if text.lower() in ("", "none", "default") else float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"invalid value for '{key}': {raw!r}") from exc


def _apply(config: Config, values: Mapping[str, object], source: str) -> Config:
    updates: Dict[str, object] = {}
    for raw_key, raw in values.items():
        key = raw_key.strip().lower()
        key = ALIASES.get(key, key)
        if key not in _FIELDS:
            raise ConfigError(f"unknown setting '{raw_key}' in {source}")
        if raw is None:
            raise ConfigError(f"setting '{raw_key}' in {source} has no value")
        updates[_FIELDS[key].name] = _convert(key, raw)
    return replace(config, **updates)


def parse_overrides(items: Iterable[str]) -> Dict[str, str]:
    overrides: Dict[str, str] = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got '{item}'")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def load_config(
    path: Optional[str] = None,
    overrides: Iterable[str] = (),
    environ: Optional[Mapping[str, str]] = None,
) -> Config:
    """
    Builds and validates a Config.

    Args:
        path: flat key=value file, or None
        overrides: "key=value" strings from --set
        environ: environment mapping (defaults to os.environ)

    Returns:
        Validated Config
    """
    environ = os.environ if environ is None else environ
    config = Config()

    env_values = {
        key[len(ENV_PREFIX):]: value for key, value in environ.items() if key.upper().startswith(ENV_PREFIX)
    }
    config = _apply(config, env_values, "environment")

    if path:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        config = _apply(config, dotenv_values(path), path)

    config = _apply(config, parse_overrides(overrides), "--set")
    validate(config)
    return config


def validate(config: Config) -> None:
    if config.nx < 2 or config.ny < 2:
        raise GridError(f"degenerate grid: nx={config.nx}, ny={config.ny} (need at least 2)")
    if not (config.Lx > 0 and config.Ly > 0):
        raise GridError(f"side lengths must be positive, got Lx={config.Lx}, Ly={config.Ly}")
    if config.boundary_config.upper() not in ("A", "B"):
        raise ConfigError(f"boundary_config must be A or B, got '{config.boundary_config}'")
    if not config.alpha > 0:
        raise ConfigError(f"alpha must be positive, got {config.alpha}")
    if config.modes < 1:
        raise ConfigError(f"modes must be at least 1, got {config.modes}")
    if config.modes > config.nx * config.ny:
        raise ConfigError(f"modes={config.modes} exceeds the {config.nx * config.ny} grid unknowns")
    if not (config.lqr_q > 0 and config.lqr_r > 0):
        raise ConfigError(f"lqr_q and lqr_r must be positive, got {config.lqr_q}, {config.lqr_r}")
    if not (config.dt > 0 and config.tmax > 0):
        raise ConfigError(f"dt and tmax must be positive, got dt={config.dt}, tmax={config.tmax}")
    if not 0 < config.window <= 1:
        raise ConfigError(f"window must lie in (0, 1], got {config.window}")
    if config.record_every < 1:
        raise ConfigError(f"record_every must be at least 1, got {config.record_every}")
    if config.initial not in INITIAL_KINDS and not os.path.isfile(config.initial):
        raise ConfigError(f"initial must be one of {', '.join(INITIAL_KINDS)} or an existing file, got '{config.initial}'")
    if config.observer_init not in OBSERVER_INITS:
        raise ConfigError(f"observer_init must be one of {', '.join(OBSERVER_INITS)}, got '{config.observer_init}'")
    if config.eigensolver not in EIGENSOLVERS:
        raise ConfigError(f"eigensolver must be one of {', '.join(EIGENSOLVERS)}, got '{config.eigensolver}'")
    for name in ("eps_res", "rank_tol", "cluster_tol"):
        value = getattr(config, name)
        if value is not None and not value > 0:
            raise ConfigError(f"{name} must be positive, got {value}")
