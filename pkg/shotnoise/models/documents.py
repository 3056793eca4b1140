"""
JSON documents accepted on the command line and by the loaders.

Every document forbids unknown keys. Model document layout:

    {
      "d": 1, "T": 1.0,
      "atoms": [{"id": "a", "payload": [1.0], "weight": 1.0}],
      "shape": {"family": "instantaneous" | "exponential" | "linear_ramp",
                "params": {"beta": 1.0} | {"tau": 0.5} | {}},
      "shot_value": {"family": "constant" | "linear_growth" | "norm_growth" | "saturating"},
      "remainder": {"family": "zero" | "scaled", "params": {"coefficient": 1.0}},
      "envelopes": {"lipschitz": {"a": 0.0}, "growth": {}, "varsigma": {}}
    }
"""

import math
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SHAPE_PARAMS = {'instantaneous': set(), 'exponential': {'beta'}, 'linear_ramp': {'tau'}}
REMAINDER_PARAMS = {'zero': set(), 'scaled': {'coefficient'}}
CRITERIA = ('A1', 'A2', 'A3', 'A4', 'A5', 'A6', 'A7')


class StrictDocument(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


def _finite(values: List[float], name: str) -> List[float]:
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"{name} must be finite")
    return values


class AtomDocument(StrictDocument):
    id: str
    payload: List[float]
    weight: float = Field(gt=0)

    @field_validator('payload')
    @classmethod
    def _payload(cls, value: List[float]) -> List[float]:
        _finite(value, 'payload')
        if any(v < 0 for v in value):
            raise ValueError("payload entries must be nonnegative (shot values live in R_+^d)")
        return value

    @field_validator('weight')
    @classmethod
    def _weight(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("weight must be finite")
        return value


class ShapeDocument(StrictDocument):
    family: Literal['instantaneous', 'exponential', 'linear_ramp']
    params: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode='after')
    def _params(self) -> 'ShapeDocument':
        expected = SHAPE_PARAMS[self.family]
        if set(self.params) != expected:
            raise ValueError(f"shape family {self.family!r} takes params {sorted(expected)}, got {sorted(self.params)}")
        for key, value in self.params.items():
            if not math.isfinite(value) or value <= 0:
                raise ValueError(f"shape param {key!r} must be positive")
        return self


class ShotValueDocument(StrictDocument):
    family: Literal['constant', 'linear_growth', 'norm_growth', 'saturating'] = 'constant'


class RemainderDocument(StrictDocument):
    family: Literal['zero', 'scaled'] = 'zero'
    params: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode='after')
    def _params(self) -> 'RemainderDocument':
        expected = REMAINDER_PARAMS[self.family]
        if set(self.params) != expected:
            raise ValueError(f"remainder family {self.family!r} takes params {sorted(expected)}")
        _finite(list(self.params.values()), 'remainder params')
        return self


class EnvelopeDocument(StrictDocument):
    lipschitz: Dict[str, float] = Field(default_factory=dict)
    growth: Dict[str, float] = Field(default_factory=dict)
    varsigma: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode='after')
    def _nonnegative(self) -> 'EnvelopeDocument':
        for table in (self.lipschitz, self.growth, self.varsigma):
            if any(not math.isfinite(v) or v < 0 for v in table.values()):
                raise ValueError("envelope values must be finite and nonnegative")
        return self


class ModelDocument(StrictDocument):
    name: Optional[str] = None
    d: int = Field(ge=1)
    T: float = Field(gt=0)
    atoms: List[AtomDocument] = Field(min_length=1)
    shape: ShapeDocument
    shot_value: ShotValueDocument = Field(default_factory=ShotValueDocument)
    remainder: RemainderDocument = Field(default_factory=RemainderDocument)
    envelopes: EnvelopeDocument = Field(default_factory=EnvelopeDocument)

    @model_validator(mode='after')
    def _consistent(self) -> 'ModelDocument':
        ids = [atom.id for atom in self.atoms]
        if len(set(ids)) != len(ids):
            raise ValueError("atom ids must be unique")
        for atom in self.atoms:
            if len(atom.payload) != self.d:
                raise ValueError(f"atom {atom.id!r} payload must have length d={self.d}")
        for table in (self.envelopes.lipschitz, self.envelopes.growth, self.envelopes.varsigma):
            unknown = set(table) - set(ids)
            if unknown:
                raise ValueError(f"envelope overrides name unknown atoms {sorted(unknown)}")
        if not math.isfinite(self.T):
            raise ValueError("T must be finite")
        return self


class ControlDocument(StrictDocument):
    time_grid: List[float] = Field(min_length=2)
    values: List[List[float]] = Field(min_length=1)


ControlRef = Union[ControlDocument, str]


class PathTargetDocument(StrictDocument):
    times: List[float] = Field(min_length=1)
    values: List[List[float]] = Field(min_length=1)

    @model_validator(mode='after')
    def _lengths(self) -> 'PathTargetDocument':
        if len(self.times) != len(self.values):
            raise ValueError("path target needs one value row per time")
        return self


class SimulateParams(StrictDocument):
    epsilon: float = Field(gt=0)
    control: Optional[ControlRef] = None
    grid_points: Optional[int] = Field(default=None, ge=1)
    replication: int = Field(default=0, ge=0)


class FluidParams(StrictDocument):
    control: Optional[ControlRef] = None
    tol: Optional[float] = Field(default=None, gt=0)
    grid_points: int = Field(default=512, ge=1)


class RateParams(StrictDocument):
    terminal: Optional[List[float]] = None
    path: Optional[PathTargetDocument] = None
    cells: int = Field(default=16, ge=1)
    constraint_tol: Optional[float] = Field(default=None, gt=0)
    max_rounds: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode='after')
    def _one_target(self) -> 'RateParams':
        if (self.terminal is None) == (self.path is None):
            raise ValueError("rate needs exactly one of 'terminal' or 'path'")
        return self


class MCParams(StrictDocument):
    epsilon: Optional[float] = Field(default=None, gt=0)
    epsilons: Optional[List[float]] = None
    threshold: List[Optional[float]] = Field(min_length=1)
    replications: int = Field(ge=1)
    method: Literal['naive', 'is', 'exact'] = 'naive'
    tilt: Optional[Union[Literal['optimal'], ControlDocument, str]] = None
    cells: int = Field(default=16, ge=1)

    @model_validator(mode='after')
    def _one_scale(self) -> 'MCParams':
        if (self.epsilon is None) == (self.epsilons is None):
            raise ValueError("mc needs exactly one of 'epsilon' or 'epsilons'")
        if self.epsilons is not None and any(e <= 0 for e in self.epsilons):
            raise ValueError("epsilons must be positive")
        if self.method == 'is' and self.tilt is None:
            raise ValueError("method 'is' needs a tilt")
        return self


class VerifyParams(StrictDocument):
    criteria: List[Literal['A1', 'A2', 'A3', 'A4', 'A5', 'A6', 'A7']] = Field(default_factory=lambda: list(CRITERIA))
    a1_tolerance: float = Field(default=1e-3, gt=0)
    a2_tolerance: float = Field(default=1e-7, gt=0)
    a3_sup_bound: float = Field(default=0.06, gt=0)
    a3_seeds: int = Field(default=100, ge=3)
    a4_tolerance: float = Field(default=0.15, gt=0)
    a5_replications: int = Field(default=100_000, ge=100)
    a5_sigmas: float = Field(default=3.0, gt=0)
    a6_instances: int = Field(default=20, ge=1)
    a6_tolerance: float = Field(default=1e-5, gt=0)
    a7_samples: int = Field(default=10_000, ge=1)
    a7_tolerance: float = Field(default=1e-12, gt=0)


class RunConfig(StrictDocument):
    command: Optional[Literal['simulate', 'fluid', 'rate', 'mc', 'verify']] = None
    model: Optional[Union[ModelDocument, str]] = None
    seed: Optional[int] = Field(default=None, ge=0, lt=2**64)
    out: Optional[str] = None
    threads: Optional[int] = Field(default=None, ge=1)
    simulate: Optional[SimulateParams] = None
    fluid: Optional[FluidParams] = None
    rate: Optional[RateParams] = None
    mc: Optional[MCParams] = None
    verify: Optional[VerifyParams] = None
