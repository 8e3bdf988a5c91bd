from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from ldp_unifier.alphabet import Alphabet
from ldp_unifier.errors import ConfigError

logger = logging.getLogger('ldp_unifier.guardrails')

WEIGHT_TOL = 1e-9

Family = Literal['krr', 'geom_linear', 'geom_planar', 'rappor', 'shokri']
EstimatorName = Literal['cr_inv', 'cr_ibu', 'cr_rappor', 'cm_inv', 'cm_ibu', 'cm_rappor', 'gibu']
MetricName = Literal['emd', 'l2sq', 'tv']


class MechanismSpec(BaseModel):
    family: Family = Field(..., description="Mechanism family")
    parameter: float = Field(..., ge=0, description="epsilon (krr, rappor), epsilon_G per km (geometric) or q_max (shokri)")
    weight: float = Field(..., gt=0, description="Share of users assigned to this mechanism")

    @model_validator(mode='after')
    def _positive_privacy(self) -> 'MechanismSpec':
        if self.family != 'shokri' and self.parameter <= 0:
            raise ValueError(f"{self.family} needs a positive parameter, got {self.parameter}")
        return self


class DataSettings(BaseModel):
    source: Literal['synthetic', 'gowalla'] = Field('synthetic', description="Binomial samples or Gowalla check-ins")
    alpha: float = Field(0.5, gt=0, lt=1, description="Success probability of the binomial truth")
    n_schedule: List[int] = Field(default_factory=lambda: [1_000, 10_000, 100_000, 1_000_000])
    trials: int = Field(20, ge=1)
    seed: int = Field(0, ge=0, description="Root seed; every (n, trial) gets its own child stream")
    path: Optional[Path] = Field(None, description="Gowalla check-in TSV")
    cell_counts: Optional[Path] = Field(None, description="Cached 'cell_index,count' CSV used instead of the TSV")
    one_per_user: bool = Field(False, description="Keep only each user's first check-in")

    @field_validator('n_schedule')
    @classmethod
    def _increasing(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("n_schedule must not be empty")
        if v[0] < 1 or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"n_schedule must be positive and strictly increasing, got {v}")
        return v

    @model_validator(mode='after')
    def _gowalla_input(self) -> 'DataSettings':
        if self.source == 'gowalla' and self.path is None and self.cell_counts is None:
            raise ValueError("gowalla data needs 'path' or 'cell_counts'")
        return self


class EstimatorSettings(BaseModel):
    delta: float = Field(1e-10, gt=0, description="Stop when the log-likelihood changes by less than this")
    max_iters: int = Field(100_000, ge=1)


class EmdSettings(BaseModel):
    exact_cap: int = Field(200, ge=1, description="Largest planar grid solved exactly")
    coarsen: Optional[int] = Field(None, ge=1, description="Merge factor x factor cells before planar EMD")


class ExperimentConfig(BaseModel):
    alphabet: Alphabet
    data: DataSettings = Field(default_factory=DataSettings)
    mechanisms: List[MechanismSpec] = Field(..., min_length=1)
    estimators: List[EstimatorName] = Field(..., min_length=1)
    post_processing: Literal['projection', 'normalization', 'both'] = 'projection'
    estimator: EstimatorSettings = Field(default_factory=EstimatorSettings)
    emd: EmdSettings = Field(default_factory=EmdSettings)
    metrics: List[MetricName] = Field(default_factory=lambda: ['emd'], min_length=1)
    timing: bool = Field(False, description="Record wall-clock time per estimator; on makes wall_ms vary between runs")

    @model_validator(mode='after')
    def _check_mixture(self) -> 'ExperimentConfig':
        total = sum(m.weight for m in self.mechanisms)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"mechanism weights sum to {total!r}, expected 1")
        for field_name in ('estimators', 'metrics'):
            values = getattr(self, field_name)
            if len(set(values)) != len(values):
                raise ValueError(f"duplicate entries in {field_name}")
        return self

    @property
    def post_methods(self) -> List[str]:
        if self.post_processing == 'both':
            return ['projection', 'normalization']
        return [self.post_processing]

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'ExperimentConfig':
        try:
            with open(path, 'r', encoding='utf-8') as f:
                raw = yaml.safe_load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        except yaml.YAMLError as e:
            raise ConfigError(f"config {path} is not valid YAML: {e}")
        return cls.parse_raw_config(raw, source=str(path))

    @classmethod
    def parse_raw_config(cls, raw, source: str = '<memory>') -> 'ExperimentConfig':
        if not isinstance(raw, dict):
            raise ConfigError(f"config {source} must be a mapping at the top level")
        try:
            return cls.model_validate(raw)
        except ValidationError as e:
            raise ConfigError(f"invalid config {source}:\n{e}")


class ResultRow(BaseModel):
    n: int
    trial: int
    estimator: str
    post: str
    metric: str
    value: float = Field(..., ge=0)
    iterations: Optional[int] = None
    wall_ms: int = Field(0, ge=0)


class Checkin(BaseModel):
    user_id: int
    timestamp: str = Field(..., description="Kept verbatim")
    lat: float = Field(..., ge=-90, le=90)
    lon: float = Field(..., ge=-180, le=180)
    location_id: int


class BoundReport(BaseModel):
    bound_value: float = Field(..., ge=0)
    n: int = Field(..., ge=1)
    eps_n: float = Field(..., gt=0, description="Compound epsilon the bound was evaluated at")
