"""
Shot-noise model types.

A model is described on a finite atomic mark space. The shot shape, remainder
and shot value are plain callables so that tests and library users can supply
their own; the JSON surface only builds them from the catalogue.

Callable conventions (d is the model dimension):

    hbar(t, atom, x)          t scalar or array of shape (n,); x shape (d,)
                              -> array of shape (*t.shape, d)
    remainder(eps, t, atom, x)  same shapes as hbar
    shot_value(atom, x)       x shape (..., d) -> (..., d)
    jacobian(atom, x)         x shape (..., d) -> (..., d, d)
    lipschitz/growth/varsigma(atom) -> float
"""

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from shotnoise.errors import InvalidArgumentError


@dataclass(frozen=True)
class MarkAtom:
    """One atom of the mark space: identifier, payload vector and nu-weight"""

    id: str
    payload: Tuple[float, ...]
    weight: float

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.payload, dtype=float)


@dataclass(frozen=True)
class MarkSpace:
    """Finite atomic mark space; nu(X) is the sum of the atom weights"""

    atoms: Tuple[MarkAtom, ...]

    def __post_init__(self):
        if len(self.atoms) == 0:
            raise InvalidArgumentError("mark space needs at least one atom")
        ids = [atom.id for atom in self.atoms]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError(f"atom ids must be unique, got {ids}")
        for atom in self.atoms:
            if not math.isfinite(atom.weight) or atom.weight <= 0:
                raise InvalidArgumentError(f"atom {atom.id!r} has non-positive weight {atom.weight}")

    @classmethod
    def from_weights(cls, payloads: List[List[float]], weights: List[float],
                     ids: Optional[List[str]] = None) -> 'MarkSpace':
        ids = ids or [f"z{k}" for k in range(len(weights))]
        return cls(tuple(MarkAtom(str(i), tuple(float(v) for v in p), float(w))
                         for i, p, w in zip(ids, payloads, weights)))

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def ids(self) -> Tuple[str, ...]:
        return tuple(atom.id for atom in self.atoms)

    @property
    def weights(self) -> np.ndarray:
        return np.array([atom.weight for atom in self.atoms], dtype=float)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def index_of(self, atom_id: str) -> int:
        try:
            return self.ids.index(atom_id)
        except ValueError:
            raise InvalidArgumentError(f"unknown atom id {atom_id!r}")


@dataclass(frozen=True)
class ShotNoiseModel:
    """
    State-dependent shot-noise model H_eps = Hbar(t, z, eps x) + R_eps(t, z, eps x).

    `instantaneous` marks models whose shape and remainder both have the time
    profile 1{t>0}; `state_independent` marks h(z, x) = h(z) with R = 0. Both
    flags enable fast paths and are set by the catalogue builder.
    """

    dimension: int
    horizon: float
    mark_space: MarkSpace
    hbar: Callable[..., np.ndarray]
    remainder: Callable[..., np.ndarray]
    shot_value: Callable[..., np.ndarray]
    lipschitz: Callable[[MarkAtom], float]
    growth: Callable[[MarkAtom], float]
    varsigma: Callable[[MarkAtom], float]
    jacobian: Optional[Callable[..., np.ndarray]] = None
    instantaneous: bool = False
    state_independent: bool = False
    name: str = 'custom'
    description: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if isinstance(self.dimension, bool) or not isinstance(self.dimension, int) or self.dimension < 1:
            raise InvalidArgumentError(f"dimension must be a positive integer, got {self.dimension!r}")
        if not math.isfinite(self.horizon) or self.horizon <= 0:
            raise InvalidArgumentError(f"horizon must be positive, got {self.horizon!r}")

    @property
    def atoms(self) -> Tuple[MarkAtom, ...]:
        return self.mark_space.atoms

    def lipschitz_vector(self) -> np.ndarray:
        return np.array([self.lipschitz(atom) for atom in self.atoms], dtype=float)

    def shot_values(self, x: np.ndarray) -> np.ndarray:
        """h(z_k, x) for every atom; x shape (..., d) -> (K, ..., d)"""
        return np.stack([np.asarray(self.shot_value(atom, x), dtype=float) for atom in self.atoms])

    def shot_jacobians(self, x: np.ndarray) -> np.ndarray:
        """dh/dx for every atom; x shape (n, d) -> (K, n, d, d)"""
        if self.jacobian is not None:
            return np.stack([np.asarray(self.jacobian(atom, x), dtype=float) for atom in self.atoms])
        return self._finite_difference_jacobians(x)

    def _finite_difference_jacobians(self, x: np.ndarray, step: float = 1e-7) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = self.dimension
        out = np.zeros((len(self.atoms),) + x.shape + (d,))
        for i in range(d):
            bump = np.zeros(d)
            bump[i] = step
            lower = np.maximum(x - bump, 0.0)
            upper = x + bump
            width = (upper - lower)[..., i:i + 1]
            out[..., i] = (self.shot_values(upper) - self.shot_values(lower)) / width
        return out


@dataclass(frozen=True)
class CheckGrid:
    """Finite sample sets for the sampled condition checks"""

    times: np.ndarray
    states: np.ndarray
    pairs: np.ndarray
    epsilons: np.ndarray

    @classmethod
    def default(cls, model: ShotNoiseModel, epsilons=(1.0, 0.1, 0.01), n_times: int = 64,
                n_states: int = 32, state_bound: float = 10.0, seed: int = 0) -> 'CheckGrid':
        """64 log-spaced times in (0, 4T/eps_min], 32 random states in [0, m]^d"""
        eps = np.asarray(epsilons, dtype=float)
        t_max = 4.0 * model.horizon / eps.min()
        times = np.geomspace(t_max * 1e-6, t_max, n_times)
        rng = np.random.default_rng(seed)
        states = rng.uniform(0.0, state_bound, size=(n_states, model.dimension))
        states[0] = 0.0
        partners = rng.uniform(0.0, state_bound, size=(n_states, model.dimension))
        pairs = np.stack([states, partners], axis=1)
        return cls(times=times, states=states, pairs=pairs, epsilons=eps)

    def is_empty(self) -> bool:
        return (self.times.size == 0 or self.states.size == 0
                or self.pairs.size == 0 or self.epsilons.size == 0)


@dataclass
class CheckResult:
    """Outcome of one sampled sub-condition"""

    condition: str
    check: str
    passed: bool
    worst_violation: float
    witness: Dict[str, Any] = field(default_factory=dict)
    details: str = ''

    def to_dict(self) -> Dict[str, Any]:
        return {
            'condition': self.condition,
            'check': self.check,
            'passed': self.passed,
            'worst_violation': self.worst_violation,
            'witness': self.witness,
            'details': self.details,
        }


@dataclass
class ValidationReport:
    checks: List[CheckResult]

    @property
    def accepted(self) -> bool:
        return all(check.passed for check in self.checks)

    def check(self, condition: str) -> CheckResult:
        for result in self.checks:
            if result.condition == condition:
                return result
        raise KeyError(condition)

    def to_dict(self) -> Dict[str, Any]:
        return {'accepted': self.accepted, 'checks': [c.to_dict() for c in self.checks]}
