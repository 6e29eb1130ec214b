"""Experiment configuration schema.

Configs are JSON objects. Unknown keys are rejected so that typos in a
sweep fail loudly instead of silently running the defaults.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigurationError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class TrainConfig(_Strict):
    """Optimizer settings for one active-learning cycle.

    ``lam`` weighs the consistency term (JSON key ``lambda``) and ``alpha``
    is the EMA decay of the baseline model.
    """

    eta: float = Field(0.1, gt=0)
    lam: float = Field(0.05, ge=0, alias="lambda")
    alpha: float = Field(0.999, ge=0, le=1)
    epochs: int = Field(20, ge=1)
    batch_size: int = Field(32, ge=1)
    unsup_batch_size: int = Field(64, ge=1)
    seed: int = 0
    output_mode: Literal["probs", "logits"] = "probs"


class DatasetConfig(_Strict):
    kind: Literal["two_moons", "blobs", "csv"] = "two_moons"
    n: int = Field(2000, ge=2)
    n_test: int = Field(1000, ge=1)
    noise: float = Field(0.2, ge=0)
    k: int = Field(4, ge=1)
    spread: float = Field(1.0, ge=0)
    path: str | None = None
    label_column: int = -1
    delimiter: str = ","
    header: bool = True
    test_fraction: float = Field(0.2, gt=0, lt=1)
    standardize: bool = True

    @model_validator(mode="after")
    def _csv_needs_path(self):
        if self.kind == "csv" and not self.path:
            raise ValueError("dataset.path is required when kind is 'csv'")
        return self


class NetworkConfig(_Strict):
    hidden: tuple[int, ...] = (32, 32)
    init_scale: float = Field(0.5, gt=0)


class StrategyConfig(_Strict):
    kind: Literal["random", "cod", "emaod"] = "cod"
    tie_rule: Literal["lowest_index", "seeded_shuffle"] = "lowest_index"


class ExperimentConfig(_Strict):
    """Full active-learning run: 10% start, +5% per cycle, 7 cycles by default."""

    dataset: DatasetConfig = DatasetConfig()
    network: NetworkConfig = NetworkConfig()
    start_fraction: float = Field(0.10, gt=0, lt=1)
    budget_fraction: float = Field(0.05, gt=0, lt=1)
    num_cycles: int = Field(7, ge=1)
    strategy: StrategyConfig = StrategyConfig()
    train: TrainConfig = TrainConfig()
    seeds: tuple[int, ...] = (0,)
    reinit_per_cycle: bool = False

    @model_validator(mode="after")
    def _schedule_fits(self):
        total = self.start_fraction + (self.num_cycles - 1) * self.budget_fraction
        if total > 1.0 + 1e-12:
            raise ValueError(
                f"start_fraction + (num_cycles - 1) * budget_fraction = {total:g} exceeds 1"
            )
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        return self

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json", by_alias=True), indent=2, sort_keys=True) + "\n"


def _format_errors(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(obj) -> ExperimentConfig:
    """Validate a decoded JSON object. Raises ConfigurationError naming each bad field."""
    try:
        return ExperimentConfig.model_validate(obj)
    except ValidationError as exc:
        raise ConfigurationError(_format_errors(exc)) from None


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(obj)
