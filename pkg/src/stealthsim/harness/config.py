"""JSON experiment configuration with a versioned schema.

Example::

    {
      "schema_version": 1,
      "case": "vehicle",
      "horizon": 3000,
      "n_runs": 200,
      "seed": 7,
      "plant": {"sigma_w": 0.0001},
      "attack": {"strategy": "lti", "s0": [0, 0.001, 0.001, 0]},
      "detectors": {"kinds": ["chi2", "cusum"], "target_fa": 0.05}
    }

Unknown keys at any level are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

from ..control import ConfigError

SCHEMA_VERSION = 1


def _strict(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    extra = sorted(set(data) - names)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {extra}; allowed: {sorted(names)}")
    return cls(**data)


@dataclass
class PlantOverrides:
    dt: Optional[float] = None
    sigma_w: Optional[float] = None
    sigma_v: Optional[float] = None

    def kwargs(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class PerceptionConfig:
    gamma: float = 0.01
    safe_radius: float = 1.0
    error: str = "tanh"

    def __post_init__(self):
        if self.error != "tanh":
            raise ConfigError(f"unsupported perception error {self.error!r}; valid: ['tanh']")
        if self.gamma < 0 or self.safe_radius <= 0:
            raise ConfigError("perception needs gamma >= 0 and safe_radius > 0")


@dataclass
class AttackSpec:
    strategy: str = "lti"
    s0: Optional[List[float]] = None
    b_zeta: Optional[float] = None
    start_step: int = 0


@dataclass
class DetectorSpec:
    kinds: List[str] = field(default_factory=lambda: ["chi2", "cusum"])
    target_fa: float = 0.05
    calibration_runs: int = 50
    cusum_drift: Optional[float] = None

    def __post_init__(self):
        bad = [k for k in self.kinds if k not in ("chi2", "cusum")]
        if bad:
            raise ConfigError(f"unknown detector kind(s) {bad}; valid: ['chi2', 'cusum']")
        if not 0 < self.target_fa < 1:
            raise ConfigError("target_fa must lie in (0, 1)")


@dataclass
class ExperimentConfig:
    case: str = "pendulum"
    horizon: int = 500
    n_runs: int = 100
    seed: int = 0
    schema_version: int = SCHEMA_VERSION
    plant: PlantOverrides = field(default_factory=PlantOverrides)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    attack: Optional[AttackSpec] = None
    detectors: Optional[DetectorSpec] = field(default_factory=DetectorSpec)
    out_dir: Optional[str] = None
    workers: int = 1

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}; expected {SCHEMA_VERSION}")
        if self.case not in ("pendulum", "vehicle"):
            raise ConfigError(f"unknown case {self.case!r}; valid: ['pendulum', 'vehicle']")
        if self.horizon < 1 or self.n_runs < 1 or self.workers < 1:
            raise ConfigError("horizon, n_runs and workers must be >= 1")

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        data = dict(data)
        nested = {
            "plant": PlantOverrides,
            "perception": PerceptionConfig,
            "attack": AttackSpec,
            "detectors": DetectorSpec,
        }
        for key, typ in nested.items():
            if key in data and data[key] is not None:
                data[key] = _strict(typ, data[key], key)
        try:
            return _strict(cls, data, "config")
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


def preset_config(name: str, seed: int = 0) -> ExperimentConfig:
    """Defaults for the two case studies, with the preset attack attached."""
    if name == "pendulum":
        return ExperimentConfig(
            case="pendulum",
            horizon=500,
            n_runs=100,
            seed=seed,
            attack=AttackSpec(strategy="open_loop", s0=[0.001, 0.001]),
        )
    if name == "vehicle":
        return ExperimentConfig(
            case="vehicle",
            horizon=3000,
            n_runs=200,
            seed=seed,
            attack=AttackSpec(strategy="lti", s0=[0.0, 0.001, 0.001, 0.0]),
        )
    raise ConfigError(f"unknown preset {name!r}; valid: ['pendulum', 'vehicle']")


def merge_overrides(cfg: ExperimentConfig, overrides: Optional[dict]) -> ExperimentConfig:
    """Deep-merge a plain dict of overrides into ``cfg`` (validated by round-trip)."""
    if not overrides:
        return cfg
    base = cfg.to_dict()
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            base[k] = {**base[k], **v}
        else:
            base[k] = v
    return ExperimentConfig.from_dict(base)
