"""Scenario file schema (YAML or JSON)."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_serializer, field_validator, model_validator

from .decision import PolicyConfig, ServiceSpec
from .errors import InvalidConfig
from .lstm import Hyper
from .sim import DAY_TICKS

POLICIES = ("reactive", "proactive_oracle", "proactive_lstm")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PolicySection(_Section):
    policy: Literal["reactive", "proactive_oracle", "proactive_lstm"] = "proactive_lstm"
    w_cpu: float = Field(0.5, ge=0)
    w_mem: float = Field(0.5, ge=0)
    hysteresis: float = Field(0.2, ge=0)
    migration_ticks: int = Field(2, ge=1)

    @field_validator("hysteresis", mode="before")
    @classmethod
    def _inf(cls, value: Any) -> Any:
        # YAML ".inf" already parses; accept the plain strings too
        if isinstance(value, str) and value.strip().lower() in ("inf", "infinity", "+inf"):
            return math.inf
        return value

    @field_serializer("hysteresis")
    def _dump_inf(self, value: float) -> float | str:
        # JSON has no infinity literal
        return "inf" if math.isinf(value) else value

    def to_policy(self) -> PolicyConfig:
        return PolicyConfig(self.policy, self.w_cpu, self.w_mem, self.hysteresis, self.migration_ticks)


class PredictorSection(_Section):
    hidden: int = Field(32, ge=1)
    seq_len: int = Field(24, ge=1)
    horizon: int = Field(15, ge=1)
    lr: float = Field(0.05, gt=0)
    epochs: int = Field(30, ge=0)
    batch_size: int = Field(32, ge=1)
    seed: int = 0

    def to_hyper(self) -> Hyper:
        return Hyper(**self.model_dump())


class ServiceEntry(_Section):
    id: str
    cpu_millicores: int = Field(gt=0)
    mem_mib: int = Field(gt=0)

    def to_spec(self) -> ServiceSpec:
        return ServiceSpec(self.id, self.cpu_millicores, self.mem_mib)


class ScenarioConfig(_Section):
    seed: int = 0
    duration_ticks: Optional[int] = Field(None, gt=0)
    duration_days: Optional[float] = Field(None, gt=0)
    training_days: float = Field(14, ge=0)
    report_interval: int = Field(1, ge=1)
    prediction_interval: int = Field(15, ge=1)
    oracle_prediction_interval: int = Field(1, ge=1)
    fleet: dict[str, Any]
    services: list[ServiceEntry] = []
    policy: PolicySection = PolicySection()
    predictor: PredictorSection = PredictorSection()

    @model_validator(mode="after")
    def _check(self) -> "ScenarioConfig":
        if self.duration_ticks is None and self.duration_days is None:
            raise ValueError("one of duration_ticks or duration_days is required")
        ids = [s.id for s in self.services]
        if len(set(ids)) != len(ids):
            raise ValueError("service ids must be unique")
        warmup = self.predictor.seq_len + self.predictor.horizon
        if self.total_ticks <= warmup:
            raise ValueError(f"duration {self.total_ticks} must exceed warmup {warmup}")
        if self.train_ticks >= self.total_ticks:
            raise ValueError("training period must end before the run does")
        if self.policy.policy == "proactive_lstm" and self.train_ticks <= warmup:
            raise ValueError("proactive_lstm needs a training period longer than seq_len + horizon")
        return self

    @property
    def total_ticks(self) -> int:
        if self.duration_ticks is not None:
            return self.duration_ticks
        return int(round(self.duration_days * DAY_TICKS))

    @property
    def train_ticks(self) -> int:
        return int(round(self.training_days * DAY_TICKS))

    def with_policy(self, policy: str) -> "ScenarioConfig":
        data = self.model_dump()
        data["policy"]["policy"] = policy
        return ScenarioConfig.model_validate(data)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        data = self.model_dump()
        data["seed"] = seed
        return ScenarioConfig.model_validate(data)


def parse_config(data: Any) -> ScenarioConfig:
    if isinstance(data, ScenarioConfig):
        return data
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise InvalidConfig(str(exc)) from None


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise InvalidConfig(f"{path}: {exc}") from None
    return parse_config(data)
