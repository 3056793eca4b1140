from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from shotnoise.errors import InvalidArgumentError
from shotnoise.models.control import Control


@dataclass(frozen=True, eq=False)
class EventSet:
    """Realized PRM points (s_i, z_i), sorted by time"""

    epsilon: float
    times: np.ndarray
    atoms: np.ndarray  # indices into atom_ids
    atom_ids: Tuple[str, ...]
    horizon: float
    seed: int
    stream: int = 0
    control_tag: Optional[str] = None

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def events(self) -> List[Tuple[float, str]]:
        return [(float(s), self.atom_ids[k]) for s, k in zip(self.times, self.atoms)]

    def to_bytes(self) -> bytes:
        return self.times.tobytes() + np.asarray(self.atoms, dtype=np.int64).tobytes()


@dataclass(frozen=True, eq=False)
class Path:
    """Scaled trajectory X^eps sampled on an output grid starting at 0"""

    epsilon: float
    grid: np.ndarray
    values: np.ndarray  # shape (G+1, d)
    events: EventSet

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]


@dataclass(frozen=True, eq=False)
class FluidSolution:
    """Solution of the controlled integral equation on quadrature nodes and an output grid"""

    times: np.ndarray
    values: np.ndarray  # shape (len(times), d)
    nodes: np.ndarray
    node_values: np.ndarray
    iterations: Tuple[int, ...]  # Picard iterations per contraction block
    achieved_tolerance: float
    block_edges: Tuple[float, ...] = ()

    @property
    def terminal(self) -> np.ndarray:
        return self.node_values[-1]

    def at(self, t) -> np.ndarray:
        """Piecewise-linear interpolant; t scalar or array -> (..., d)"""
        t = np.asarray(t, dtype=float)
        cols = [np.interp(t, self.nodes, self.node_values[:, i]) for i in range(self.node_values.shape[1])]
        return np.stack(cols, axis=-1)


@dataclass
class RateResult:
    """Optimal control, its cost and fluid path, plus optimizer diagnostics"""

    control: Control
    cost: float
    fluid: FluidSolution
    residual: float
    converged: bool
    trace: List[Dict[str, Any]] = field(default_factory=list)
    multipliers: Optional[np.ndarray] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'cost': self.cost,
            'residual': self.residual,
            'converged': self.converged,
            'control': self.control.to_dict(),
            'fluid_endpoint': self.fluid.terminal.tolist(),
            'trace': self.trace,
        }


@dataclass(frozen=True)
class RareEvent:
    """
    Terminal coordinate-threshold set A = {x : y_i >= a_i for every i with a_i set},
    where y is the terminal state, or transform(terminal state) when a transform is given.
    """

    thresholds: Tuple[Optional[float], ...]
    transform: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        for a in self.thresholds:
            if a is not None and not np.isfinite(a):
                raise InvalidArgumentError("thresholds must be finite or None")

    @property
    def is_everything(self) -> bool:
        return self.transform is None and all(a is None or a <= 0 for a in self.thresholds)

    def contains(self, terminal: np.ndarray, slack: float = 0.0) -> np.ndarray:
        """Membership for states of shape (d,) or (R, d)"""
        y = np.atleast_2d(np.asarray(terminal, dtype=float))
        if self.transform is not None:
            y = np.array([self.transform(row) for row in y], dtype=float).reshape(y.shape[0], -1)
        hit = np.ones(y.shape[0], dtype=bool)
        for i, a in enumerate(self.thresholds):
            if a is None:
                continue
            hit &= y[:, i] >= a - slack * max(1.0, abs(a))
        return hit

    def describe(self) -> str:
        parts = [f"x{i + 1}>={a!r}" for i, a in enumerate(self.thresholds) if a is not None]
        text = ' & '.join(parts) if parts else 'everything'
        return f"transform({text})" if self.transform is not None else text


@dataclass
class MCReport:
    """Result of one Monte Carlo estimate of P(X^eps(T) in A)"""

    epsilon: float
    event: str
    replications: int
    estimate: float
    standard_error: float
    relative_error: float
    method: str
    seed: int
    wall_time: float
    workers: int = 1
    hits: Optional[int] = None
    upper_bound: Optional[float] = None  # one-sided 95% Clopper-Pearson, naive only

    def to_dict(self) -> Dict[str, Any]:
        return {
            'epsilon': self.epsilon,
            'event': self.event,
            'replications': self.replications,
            'estimate': self.estimate,
            'standard_error': self.standard_error,
            'relative_error': self.relative_error,
            'method': self.method,
            'seed': self.seed,
            'hits': self.hits,
            'upper_bound': self.upper_bound,
            'workers': self.workers,
            'wall_time': self.wall_time,
        }

    def to_row(self) -> Dict[str, Any]:
        """Reproducible subset (no wall time) for CSV export"""
        row = self.to_dict()
        row.pop('wall_time')
        row.pop('workers')
        return row


@dataclass
class DecayTable:
    """Rows (eps, p_hat, se, -eps log p_hat) and the linear extrapolation to eps = 0"""

    rows: List[Dict[str, Any]]
    intercept: float
    slope: float
    method: str
    event: str

    @property
    def flagged(self) -> List[float]:
        return [row['epsilon'] for row in self.rows if row['flagged']]

    def to_records(self) -> List[Dict[str, Any]]:
        """CSV columns epsilon, p_hat, se, neg_eps_log_p"""
        return [{key: row[key] for key in ('epsilon', 'p_hat', 'se', 'neg_eps_log_p')} for row in self.rows]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'method': self.method,
            'event': self.event,
            'rows': self.rows,
            'intercept': self.intercept,
            'slope': self.slope,
            'flagged': self.flagged,
        }
