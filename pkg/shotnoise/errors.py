"""Exception hierarchy and the exit codes the command line maps them to."""

from typing import Any, Dict, Optional


class ShotNoiseError(Exception):
    """Base class for all library errors"""

    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {'error': type(self).__name__, 'message': self.message, 'details': self.details}


class InvalidArgumentError(ShotNoiseError, ValueError):
    """An argument is outside the documented domain"""

    exit_code = 2


class ConfigError(ShotNoiseError):
    """Malformed or inconsistent run configuration"""

    exit_code = 2


class DegenerateWeightError(InvalidArgumentError):
    """A tilt assigns zero intensity to a realized event"""


class ConvergenceError(ShotNoiseError):
    """An iterative solver ran out of iterations"""

    exit_code = 3


class InfeasibleError(ShotNoiseError):
    """A rate constraint could not be met (rate function taken as infinite)"""

    exit_code = 4


class InvalidStateError(ShotNoiseError):
    """An object is not in a state that allows the requested operation"""

    exit_code = 1
