from shotnoise.models.control import Control
from shotnoise.models.domain import (
    CheckGrid,
    CheckResult,
    MarkAtom,
    MarkSpace,
    ShotNoiseModel,
    ValidationReport,
)
from shotnoise.models.results import (
    DecayTable,
    EventSet,
    FluidSolution,
    MCReport,
    Path,
    RareEvent,
    RateResult,
)

__all__ = [
    'CheckGrid',
    'CheckResult',
    'Control',
    'DecayTable',
    'EventSet',
    'FluidSolution',
    'MarkAtom',
    'MarkSpace',
    'MCReport',
    'Path',
    'RareEvent',
    'RateResult',
    'ShotNoiseModel',
    'ValidationReport',
]
