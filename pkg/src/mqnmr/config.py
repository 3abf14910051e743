"""Run configuration: flat key/value config files with flag overrides."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"config error in field '{field_name}': {message}")
        self.field = field_name


@dataclass
class GridSpec:
    """Uniform grid start:stop:step, inclusive of the stop point."""

    start: float
    stop: float
    step: float

    def values(self) -> np.ndarray:
        count = int(round((self.stop - self.start) / self.step))
        return self.start + self.step * np.arange(count + 1)

    def __str__(self) -> str:
        return f"{self.start:g}:{self.stop:g}:{self.step:g}"


def parse_grid(text: str, field_name: str) -> GridSpec:
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(field_name, f"expected start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(field_name, f"non-numeric grid component in {text!r}") from None
    if not (step > 0 and stop > start):
        raise ConfigError(field_name, "grid requires stop > start and step > 0")
    return GridSpec(start, stop, step)


@dataclass
class RunConfig:
    """Resolved settings for one CLI run; defaults mirror the reference setup."""

    experiment: str = "A"
    n_spins: list = field(default_factory=lambda: [21])
    p: list = field(default_factory=lambda: [0.001])
    tau: float = 1.0
    tau_grid: GridSpec = field(default_factory=lambda: GridSpec(0.0, 60.0, 0.01))
    t_grid: GridSpec = field(default_factory=lambda: GridSpec(0.0, 0.2, 0.0005))
    mixing: str = "ideal_mq"
    j_min: float = 0.005
    j_floor: float = 1e-6
    tau0: float = 31.0
    periods: int = 2
    avg_steps: int = 2000
    t_span: float = 20.0
    samples: int = 4096
    grid_points: int = 5
    tol: float = 1e-10
    output_dir: str = "."
    workers: int | None = None

    def validate(self) -> None:
        if self.experiment not in ("A", "B", "verify", "conservation"):
            raise ConfigError("experiment", f"unknown experiment {self.experiment!r}")
        if not self.n_spins or any((not isinstance(n, int)) or n < 1 for n in self.n_spins):
            raise ConfigError("n_spins", "requires positive integers")
        if any(not 0.0 <= p <= 1.0 for p in self.p):
            raise ConfigError("p", "perturbation strengths must lie in [0, 1]")
        if self.tau < 0:
            raise ConfigError("tau", "must be non-negative")
        for name, grid in (("tau_grid", self.tau_grid), ("t_grid", self.t_grid)):
            if not (grid.step > 0 and grid.stop > grid.start):
                raise ConfigError(name, "requires stop > start and step > 0")
            if grid.start < 0:
                raise ConfigError(name, "must start at a non-negative time")
        if self.mixing not in ("ideal_mq", "matched_heff"):
            raise ConfigError("mixing", f"unknown mixing {self.mixing!r}")
        if self.j_min <= 0:
            raise ConfigError("j_min", "threshold must be positive")
        if self.j_floor <= 0:
            raise ConfigError("j_floor", "floor must be positive")
        if self.tau0 < 0:
            raise ConfigError("tau0", "must be non-negative")
        if self.periods < 1:
            raise ConfigError("periods", "must be at least 1")
        if self.avg_steps < 100 * self.periods:
            raise ConfigError("avg_steps", "averaging grid too coarse for the window")
        if self.t_span <= 0:
            raise ConfigError("t_span", "must be positive")
        if self.samples < 2:
            raise ConfigError("samples", "need at least two samples")
        if self.grid_points < 1:
            raise ConfigError("grid_points", "must be positive")
        if self.tol <= 0:
            raise ConfigError("tol", "must be positive")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers", "must be positive when given")

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = str(value) if isinstance(value, GridSpec) else value
        return out


_INT_FIELDS = {"periods", "avg_steps", "samples", "grid_points", "workers"}
_FLOAT_FIELDS = {"tau", "j_min", "j_floor", "tau0", "t_span", "tol"}
_GRID_FIELDS = {"tau_grid", "t_grid"}
_STR_FIELDS = {"experiment", "mixing", "output_dir"}


def _parse_value(key: str, raw: str):
    if key == "n_spins":
        try:
            return [int(v) for v in raw.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(key, f"expected comma-separated integers, got {raw!r}") from None
    if key == "p":
        try:
            return [float(v) for v in raw.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(key, f"expected comma-separated floats, got {raw!r}") from None
    if key in _GRID_FIELDS:
        return parse_grid(raw, key)
    if key in _INT_FIELDS:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(key, f"expected an integer, got {raw!r}") from None
    if key in _FLOAT_FIELDS:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(key, f"expected a number, got {raw!r}") from None
    if key in _STR_FIELDS:
        return raw
    raise ConfigError(key, "unknown configuration key")


def load_config_file(path: str) -> dict:
    """Parse a flat ``key = value`` file; '#' starts a comment."""
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError("config_file", f"line {lineno}: expected 'key = value'")
                key, raw = (part.strip() for part in line.split("=", 1))
                values[key] = _parse_value(key, raw)
    except OSError as exc:
        raise ConfigError("config_file", str(exc)) from None
    return values


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge config-file values and flag overrides (flags win), then validate."""
    config = RunConfig()
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            if not hasattr(config, key):
                raise ConfigError(key, "unknown configuration key")
            setattr(config, key, value)
    config.validate()
    return config
