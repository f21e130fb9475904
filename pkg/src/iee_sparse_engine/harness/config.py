"""
Experiment configuration: YAML sections parsed into validated pydantic models
"""

from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .datasets import DatasetSpec
from ..errors import ConfigError
from ..nn.layers import LayerKind
from ..nn.model import ModelSpec
from ..sparsity.distributions import PlanMode, PlanScope, SparsityPlan
from ..sparsity.resource import BudgetKind


class Strategy(str, Enum):
    """Sparse-training strategy of a run"""
    IEE = "iee"
    RIGL = "rigl"
    SET = "set"
    STATIC = "static"


class ScheduleSection(BaseModel):
    """Cycle lengths, update period, and IEE ablation switches"""
    model_config = ConfigDict(extra="forbid")

    H: int = Field(default=150, ge=0)
    J: int = Field(default=150, ge=0)
    Q: int = Field(default=150, ge=0)
    T: Optional[int] = Field(default=None, ge=0)
    epochs: int = Field(default=20, gt=0)
    stop_fraction: float = Field(default=0.75, gt=0.0, le=1.0)
    structured_stop_epoch: float = Field(default=0.04, gt=0.0, le=1.0)
    omega_fraction: float = Field(default=0.3, ge=0.0, le=1.0)
    freeze_active: bool = True
    grow_criterion: Literal["criterion", "random"] = "criterion"
    grow_init: Literal["mru", "zero"] = "mru"
    nan_patience: int = Field(default=50, gt=0)


class OptimizerSection(BaseModel):
    """Momentum SGD with warmup and cosine decay"""
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(default=0.1, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=1e-4, ge=0.0)
    warmup_fraction: float = Field(default=0.05, ge=0.0, lt=1.0)
    min_lr: float = Field(default=0.0, ge=0.0)


class LogSection(BaseModel):
    """Event-log and checkpoint options"""
    model_config = ConfigDict(extra="forbid")

    iterations: bool = True
    snapshots: bool = True
    checkpoint_every: int = Field(default=0, ge=0)
    sync: bool = False


class StructuredSection(BaseModel):
    """Latency budget for channel-scope runs"""
    model_config = ConfigDict(extra="forbid")

    budget_kind: BudgetKind = BudgetKind.PARAM_COUNT
    table: Optional[str] = None
    budget_ms: Optional[float] = Field(default=None, gt=0.0)
    quantum: float = Field(default=0.01, gt=0.0)


class BaselineSection(BaseModel):
    """RigL / SET update schedule"""
    model_config = ConfigDict(extra="forbid")

    interval: Optional[int] = Field(default=None, gt=0)
    alpha0: float = Field(default=0.3, gt=0.0, lt=1.0)
    stop_fraction: float = Field(default=0.75, gt=0.0, le=1.0)


class ExperimentConfig(BaseModel):
    """
    A fully-resolved experiment.

    Every section rejects unknown keys; every default is materialized so
    ``dump_config`` writes the exact experiment that ran.
    """
    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    strategy: Strategy = Strategy.IEE
    importance: Literal["magnitude", "taylor"] = "magnitude"
    seeds: List[int] = Field(default_factory=lambda: [0])
    output_dir: str = "runs"
    model: ModelSpec = Field(default_factory=ModelSpec)
    plan: SparsityPlan = Field(default_factory=SparsityPlan)
    schedule: ScheduleSection = Field(default_factory=ScheduleSection)
    optimizer: OptimizerSection = Field(default_factory=OptimizerSection)
    data: DatasetSpec = Field(default_factory=DatasetSpec)
    log: LogSection = Field(default_factory=LogSection)
    structured: StructuredSection = Field(default_factory=StructuredSection)
    baseline: BaselineSection = Field(default_factory=BaselineSection)

    @model_validator(mode="after")
    def _check_references(self):
        if not self.seeds:
            raise ValueError("seeds: at least one seed is required")
        if self.importance == "taylor":
            specs = self.model.layer_specs()
            weights = [i for i, s in enumerate(specs) if s.kind in (LayerKind.DENSE, LayerKind.CONV2D)]
            for index in weights[:-1]:
                following = specs[index + 1] if index + 1 < len(specs) else None
                if following is None or following.kind != LayerKind.BATCHNORM:
                    raise ValueError(
                        f"importance: taylor needs a batchnorm after every prunable layer; "
                        f"layer {index} ({specs[index].kind.value}) has none"
                    )
        structured = self.plan.scope == PlanScope.CHANNEL
        if structured:
            if self.structured.budget_kind != BudgetKind.LATENCY:
                raise ValueError("structured.budget_kind: channel scope needs a latency budget")
            if not self.structured.table:
                raise ValueError("structured.table: channel scope needs a latency table path")
            if self.structured.budget_ms is None:
                raise ValueError("structured.budget_ms: channel scope needs a latency target")
            if self.strategy in (Strategy.RIGL, Strategy.SET):
                raise ValueError(f"strategy: {self.strategy.value} supports weight scope only")
        elif self.structured.budget_kind == BudgetKind.LATENCY:
            raise ValueError("structured.budget_kind: latency budgets need plan.scope = channel")
        if self.plan.mode == PlanMode.N_OF_M:
            if not 0 <= self.plan.n < self.plan.m:
                raise ValueError(f"plan: n-of-m needs 0 <= n < m, got n={self.plan.n}, m={self.plan.m}")
            if structured:
                raise ValueError("plan: n-of-m masks apply to weight scope only")
        return self

    def baseline_interval(self) -> int:
        return self.baseline.interval or (self.schedule.H + self.schedule.J + self.schedule.Q)


def _format_validation(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        loc = ".".join(str(p) for p in item.get("loc", ())) or "config"
        lines.append(f"{loc}: {item.get('msg', '')}")
    return "; ".join(lines)


def parse_config(data: Dict[str, Any]) -> ExperimentConfig:
    """Validate a raw mapping; field errors become one ``ConfigError``."""
    try:
        return ExperimentConfig.model_validate(data or {})
    except ValidationError as e:
        raise ConfigError(_format_validation(e)) from e


def load_config(path: str) -> ExperimentConfig:
    """
    Load an experiment YAML file.

    Args:
        path: Config file path

    Returns:
        ExperimentConfig with every default materialized

    Raises:
        ConfigError: missing file, bad YAML, unknown key, or invalid combination
    """
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config not found: {path}")
    try:
        data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(data)


def config_to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    return config.model_dump(mode="json")


def dump_config(config: ExperimentConfig, path: Optional[str] = None) -> str:
    """Serialize the resolved config as YAML (and write it when ``path`` is given)."""
    text = yaml.safe_dump(config_to_dict(config), sort_keys=False, default_flow_style=False)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    return text


def override(config: ExperimentConfig, updates: Dict[str, Any]) -> ExperimentConfig:
    """
    Copy of ``config`` with dotted-key updates applied and re-validated.

    Args:
        config: Base config
        updates: e.g. ``{"schedule.H": 100, "schedule.grow_init": "zero"}``
    """
    data = config_to_dict(config)
    for dotted, value in updates.items():
        node = data
        keys = dotted.split(".")
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                raise ConfigError(f"override: unknown section '{key}' in '{dotted}'")
            node = node[key]
        if keys[-1] not in node:
            raise ConfigError(f"override: unknown key '{dotted}'")
        node[keys[-1]] = value
    return parse_config(data)
