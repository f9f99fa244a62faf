"""Run configuration: one YAML tree with ``include`` support and embedded defaults."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .agent import TrainingConfig
from .baseline import BaselineParams
from .dynamics import ScenarioConfig
from .errors import ConfigError
from .evaluation import GridConfig
from .perception import CalibFitConfig, CalibGenConfig
from .reward import RewardParams


class CalibrationBlock(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    gen: CalibGenConfig = CalibGenConfig()
    fit: CalibFitConfig = CalibFitConfig()


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    reward: RewardParams = RewardParams()
    agent: TrainingConfig = Field(default_factory=TrainingConfig)
    baseline: BaselineParams = BaselineParams()
    grid: GridConfig = Field(default_factory=GridConfig)
    calibration: CalibrationBlock = CalibrationBlock()
    out: str = "runs/default"
    seed: int = 0

    @model_validator(mode="after")
    def _paths(self):
        if self.grid.checkpoint and not Path(self.grid.checkpoint).exists():
            raise ValueError(f"grid.checkpoint does not exist: {self.grid.checkpoint}")
        return self


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _read_tree(path: Path, seen: tuple[Path, ...] = ()) -> dict:
    path = path.resolve()
    if path in seen:
        raise ConfigError(f"include cycle through {path}")
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        tree = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    includes = tree.pop("include", [])
    if isinstance(includes, str):
        includes = [includes]
    merged: dict = {}
    for inc in includes:
        merged = _merge(merged, _read_tree(path.parent / inc, seen + (path,)))
    tree = _merge(merged, tree)
    ckpt = tree.get("grid", {}).get("checkpoint") if isinstance(tree.get("grid"), dict) else None
    if ckpt and not Path(ckpt).is_absolute():
        tree["grid"]["checkpoint"] = str(path.parent / ckpt)
    return tree


def load_config(path: Optional[str | Path] = None, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    tree = _read_tree(Path(path)) if path else {}
    if overrides:
        tree = _merge(tree, overrides)
    try:
        return RunConfig.model_validate(tree)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def dump_defaults() -> str:
    return yaml.safe_dump(RunConfig().model_dump(mode="json"), sort_keys=False)


def parse_seed_range(text: str) -> list[int]:
    """``A..B`` (inclusive), ``A,B,C`` or a single integer."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ConfigError(f"empty seed range {text!r}")
            return list(range(lo, hi + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad seed list {text!r}") from exc
