"""Run configuration: a flat key/value JSON file with protocol defaults."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

MODELS = ("i", "ii", "iii", "iv")
SOURCES = ("all", "outdoor", "indoor")
LAMBDA3_RULES = ("ratio", "exact")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Settings for one pipeline run.

    Defaults are the long-run protocol: two chains, 20,000
    burn-in iterations, 250,000 further iterations thinned by 25, lag two,
    11 df for calendar time, 2 df for temperature and ``epsilon = 0.001``
    in the inverse-gamma variance priors.
    """

    model: str = "iv"
    lag: int = 2
    time_df: int = 11
    temp_df: int = 2
    chains: int = 2
    burn_in: int = 20_000
    iterations: int = 250_000
    thin: int = 25
    epsilon: float = 0.001
    xi: float | None = None
    s2: float | None = None
    beta_prior_var: float = 1e4
    lambda3: str = "ratio"
    source: str = "all"
    replicates: int = 100
    seed: int = 1997
    acf_max_lag: int = 10
    increment: float = 10.0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.source not in SOURCES:
            raise ConfigError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.lambda3 not in LAMBDA3_RULES:
            raise ConfigError(f"lambda3 must be one of {LAMBDA3_RULES}")
        if self.lag < 0:
            raise ConfigError("lag must be >= 0")
        if self.chains < 2:
            raise ConfigError("at least 2 chains are required")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.time_df < 1 or self.temp_df < 1:
            raise ConfigError("spline degrees of freedom must be >= 1")
        if self.burn_in < 0 or self.iterations < self.thin:
            raise ConfigError("iterations must be >= thin and burn_in >= 0")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")

    def replace(self, **changes: Any) -> "RunConfig":
        data = asdict(self)
        data.update({k: v for k, v in changes.items() if v is not None})
        return RunConfig(**data)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    """Build a RunConfig from a mapping, ignoring keys it does not own.

    Unknown keys are allowed so that scenario files (a superset of the run
    configuration) can be passed straight through.
    """
    known = {f.name for f in fields(RunConfig)}
    return RunConfig(**{k: v for k, v in data.items() if k in known})


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a flat key/value object")
    return config_from_dict(data)


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
