"""Operator configuration (JSON).

Relative paths are resolved against the directory of the config file. The
packaged default seeds the ledger with the demo sources and points at
the bundled road db, road graph and training corpus.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from . import codec
from .domain import PipelineError, ReliabilityLedger
from .extraction import EngineConfig
from .fusion import FusionConfig

ENV_VAR = "MA4BDI_CONFIG"

_TOP_KEYS = {
    "ledger",
    "match_window_min",
    "speed_threshold_kmh",
    "gps_match_radius_m",
    "gps_window_min",
    "freshness_horizon_min",
    "penalty_factor",
    "alpha",
    "paths",
}
_PATH_KEYS = {"views", "roads", "graph", "corpus"}


class ConfigError(PipelineError):
    pass


@dataclass(frozen=True)
class Config:
    ledger: ReliabilityLedger
    engine: EngineConfig = EngineConfig()
    fusion: FusionConfig = FusionConfig()
    freshness_horizon_min: int = 60
    penalty_factor: float = 5.0
    alpha: float = 1.0
    paths: dict = field(default_factory=dict)

    def path(self, name: str) -> Optional[Path]:
        value = self.paths.get(name)
        return None if value is None else Path(value)


def default_config_path() -> Path:
    return Path(str(resources.files("ma4bdi") / "data" / "default_config.json"))


def _positive(body, key, default, integer=False):
    value = body.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError("invalid-config", f"{key} must be a number", key)
    if integer and not isinstance(value, int):
        raise ConfigError("invalid-config", f"{key} must be an integer", key)
    if not (value > 0 and math.isfinite(value)):
        raise ConfigError("invalid-config", f"{key} must be strictly positive", key)
    return value


def parse_config(body: dict, base_dir: Path) -> Config:
    if not isinstance(body, dict):
        raise ConfigError("invalid-config", "config must be a JSON object")
    unknown = set(body) - _TOP_KEYS
    if unknown:
        raise ConfigError("invalid-config", f"unknown config keys: {', '.join(sorted(unknown))}")
    paths = body.get("paths", {})
    unknown = set(paths) - _PATH_KEYS
    if unknown:
        raise ConfigError("invalid-config", f"unknown path keys: {', '.join(sorted(unknown))}")

    try:
        ledger = codec.ledger_from_json(body.get("ledger", {"entries": []}))
    except (KeyError, TypeError) as exc:
        raise ConfigError("invalid-config", f"malformed ledger: {exc}", "ledger") from exc
    except (ValueError, PipelineError) as exc:
        raise ConfigError("invalid-config", f"invalid ledger: {exc}", "ledger") from exc

    penalty = _positive(body, "penalty_factor", 5.0)
    if penalty < 1.0:
        raise ConfigError("invalid-config", "penalty_factor must be >= 1", "penalty_factor")
    return Config(
        ledger=ledger,
        engine=EngineConfig(
            speed_threshold_kmh=_positive(body, "speed_threshold_kmh", 20.0),
            gps_match_radius_m=_positive(body, "gps_match_radius_m", 100.0),
            gps_window_min=_positive(body, "gps_window_min", 5, integer=True),
        ),
        fusion=FusionConfig(_positive(body, "match_window_min", 15, integer=True)),
        freshness_horizon_min=_positive(body, "freshness_horizon_min", 60, integer=True),
        penalty_factor=float(penalty),
        alpha=float(_positive(body, "alpha", 1.0)),
        paths={k: str((base_dir / v).resolve()) for k, v in paths.items()},
    )


def load_config(path=None) -> Config:
    """Load ``path``, else ``$MA4BDI_CONFIG``, else the packaged default."""
    path = path or os.environ.get(ENV_VAR) or default_config_path()
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            body = json.load(fh)
    except OSError as exc:
        raise ConfigError("io-failure", f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError("invalid-config", f"{path}: {exc}") from exc
    return parse_config(body, path.parent)
