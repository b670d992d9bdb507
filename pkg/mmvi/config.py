"""Experiment configuration: pydantic-settings model with MMVI_* environment overrides."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Dict, Literal, Optional

from pydantic import Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .base import ConfigError
from .modules.solver import NewtonOptions

Problem = Literal["SingleSolitonBounce", "TwoSoliton", "Vacuum"]
StrategyName = Literal["CT", "LM", "UniformMesh"]
SchemeName = Literal["Gauss1", "Gauss2", "Lobatto2", "Lobatto3", "Radau3", "Trapezoidal"]

SCHEMES_BY_STRATEGY: Dict[str, set] = {
    "CT": {"Gauss1", "Gauss2", "Lobatto2", "Lobatto3", "Radau3"},
    "UniformMesh": {"Gauss1", "Gauss2", "Lobatto2", "Lobatto3", "Radau3"},
    "LM": {"Trapezoidal", "Lobatto2", "Lobatto3"},
}


class ExperimentConfig(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="MMVI_",
        env_file=".env",
        env_nested_delimiter="__",
        extra="ignore",
    )

    problem: Problem = "SingleSolitonBounce"
    strategy: StrategyName = "LM"
    scheme: SchemeName = "Lobatto3"
    N: int = Field(15, ge=1)
    dt: float = Field(0.01, gt=0)
    t_max: float = Field(50.0, gt=0)
    alpha: float = Field(2.5, ge=0)
    v: float = 0.9
    X0: float = 12.5
    Xmax: float = Field(25.0, gt=0)
    homotopy_d: int = Field(10, ge=1)
    output_dir: Path = Path("runs/default")
    newton: NewtonOptions = Field(default_factory=NewtonOptions)

    delta_min_factor: float = Field(1e-10, gt=0)
    record_every: int = Field(1, ge=1)
    kkt_monitor_every: int = Field(100, ge=0)
    workers: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    log_level: str = "INFO"

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        if self.scheme not in SCHEMES_BY_STRATEGY[self.strategy]:
            raise ValueError(f"scheme {self.scheme} cannot be used with strategy {self.strategy}")
        if not abs(self.v) < 1.0:
            raise ValueError(f"soliton speed must satisfy |v| < 1, got {self.v}")
        return self

    @property
    def nsteps(self) -> int:
        return int(round(self.t_max / self.dt))


def load_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Build a config from a flat JSON file and explicit overrides.

    Overrides win over file values, file values over MMVI_* variables, and
    those over the defaults. ``None`` overrides are ignored.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must contain a JSON object")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig(**data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def derive(cfg: ExperimentConfig, **changes: Any) -> ExperimentConfig:
    """Copy of ``cfg`` with ``changes`` applied and validated."""
    data = cfg.model_dump()
    data.update(changes)
    try:
        return ExperimentConfig(**data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
