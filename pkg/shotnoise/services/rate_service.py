"""
Rate function I(phi) = inf { L_T(g) : xi^g = phi } by direct minimization.

The control is discretized as u = log g on J uniform time cells; the fluid
path is the implicit trapezoid solution on a fixed node set, and gradients
come from the exact adjoint of that discrete scheme.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import structlog
from scipy.optimize import minimize, nnls

from config import Config
from shotnoise import get_settings
from shotnoise.errors import ConvergenceError, InfeasibleError, InvalidArgumentError, InvalidStateError
from shotnoise.models.control import Control
from shotnoise.models.domain import ShotNoiseModel
from shotnoise.models.results import FluidSolution, RateResult
from shotnoise.services.fluid_service import cost_lt, ell, integrate_on_nodes, quadrature_nodes
from shotnoise.utils.validation import require_increasing_grid, require_positive, require_state

logger = structlog.get_logger(__name__)

# box on u = log g
LOG_CONTROL_BOUND = 30.0


@dataclass(frozen=True)
class TerminalConstraint:
    """xi^g(T) = target"""

    target: np.ndarray

    def describe(self) -> Dict:
        return {'terminal': np.asarray(self.target, dtype=float).tolist()}


@dataclass(frozen=True)
class PathConstraint:
    """xi^g(t_i) = phi(t_i) at the control nodes, phi linear between the given points"""

    times: np.ndarray
    values: np.ndarray

    def describe(self) -> Dict:
        return {'path': {'times': np.asarray(self.times).tolist(), 'values': np.asarray(self.values).tolist()}}


Constraint = Union[TerminalConstraint, PathConstraint]


class RateProblem:
    """Discretized rate problem: forward solve, constraint residual and adjoint gradient"""

    def __init__(self, model: ShotNoiseModel, constraint: Constraint, cells: int,
                 settings: Optional[Config] = None, forward_tol: Optional[float] = None):
        if isinstance(cells, bool) or not isinstance(cells, (int, np.integer)) or cells < 1:
            raise InvalidArgumentError(f"cells must be a positive integer, got {cells!r}")
        self.settings = settings or get_settings()
        self.model = model
        self.forward_tol = forward_tol or self.settings.PICARD_TOL
        T = model.horizon
        self.grid = np.linspace(0.0, T, int(cells) + 1)
        self.n_cells = int(cells)
        self.n_atoms = len(model.atoms)
        self.nu = model.mark_space.weights

        template = Control(self.grid, np.ones((self.n_cells, self.n_atoms)))
        s = self.settings
        self.nodes = quadrature_nodes(template, np.zeros(self.n_cells), s.RATE_QUADRATURE_MAX_STEP * T,
                                      s.QUADRATURE_SUBNODES, s.CONTRACTION_TARGET)
        self.dt = np.diff(self.nodes)
        self.step_cells = template.cell_index(self.nodes[:-1])
        self.grid_index = np.searchsorted(self.nodes, self.grid)

        d = model.dimension
        if isinstance(constraint, TerminalConstraint):
            self.constraint_index = np.array([self.nodes.size - 1])
            self.targets = require_state(constraint.target, d, 'terminal target').reshape(1, d)
        elif isinstance(constraint, PathConstraint):
            times = require_increasing_grid(constraint.times, 0.0, T, 'path times')
            values = np.asarray(constraint.values, dtype=float).reshape(times.size, -1)
            if values.shape[1] != d or not np.all(np.isfinite(values)) or np.any(values < 0):
                raise InvalidArgumentError(f"path values must be finite nonnegative rows of length {d}")
            self.constraint_index = self.grid_index[1:]
            self.targets = np.stack([np.interp(self.grid[1:], times, values[:, i]) for i in range(d)], axis=-1)
        else:
            raise InvalidArgumentError(f"unsupported constraint {constraint!r}")
        self.constraint = constraint

        if model.state_independent:
            self.constant_values = model.shot_values(np.zeros(d))  # (K, d)

    @property
    def size(self) -> int:
        return self.n_cells * self.n_atoms

    def control(self, u: np.ndarray, tag: Optional[str] = None) -> Control:
        return Control.from_log(self.grid, np.asarray(u).reshape(self.n_cells, self.n_atoms), tag=tag)

    def step_weights(self, u: np.ndarray) -> np.ndarray:
        g = np.exp(np.asarray(u, dtype=float).reshape(self.n_cells, self.n_atoms))
        return g[self.step_cells] * self.nu[None, :]

    def forward(self, u: np.ndarray) -> np.ndarray:
        """Fluid path on the quadrature nodes for the control exp(u)"""
        weights = self.step_weights(u)
        if self.model.state_independent:
            increments = self.dt[:, None] * (weights @ self.constant_values)
            return np.vstack([np.zeros((1, self.model.dimension)), np.cumsum(increments, axis=0)])
        s = self.settings
        values, _, _, _ = integrate_on_nodes(self.model, self.nodes, weights, self.forward_tol,
                                             s.PICARD_MAX_ITER, s.CONTRACTION_TARGET)
        return values

    def residual(self, path: np.ndarray) -> np.ndarray:
        return (path[self.constraint_index] - self.targets).ravel()

    def cost(self, u: np.ndarray) -> float:
        g = np.exp(np.asarray(u, dtype=float).reshape(self.n_cells, self.n_atoms))
        return float(np.sum(np.diff(self.grid)[:, None] * self.nu[None, :] * ell(g)))

    def objective_and_gradient(self, u: np.ndarray, multipliers: np.ndarray,
                               penalty: float) -> Tuple[float, np.ndarray]:
        """
        Augmented Lagrangian cost + lambda.c + penalty/2 ||c||^2 and its gradient in u
        """
        u = np.asarray(u, dtype=float)
        d = self.model.dimension
        n_steps = self.dt.size
        g = np.exp(u.reshape(self.n_cells, self.n_atoms))
        weights = g[self.step_cells] * self.nu[None, :]

        path = self.forward(u)
        c = self.residual(path)
        value = self.cost(u) + float(multipliers @ c) + 0.5 * penalty * float(c @ c)

        sensitivity = np.zeros_like(path)
        sensitivity[self.constraint_index] += (multipliers + penalty * c).reshape(-1, d)

        # adjoint of xi_{l+1} = xi_l + dt_l/2 (F_l(xi_l) + F_l(xi_{l+1})); adjoint[i] pairs with step i-1
        adjoint = np.zeros((n_steps + 2, d))
        if self.model.state_independent:
            adjoint[1:n_steps + 1] = -np.cumsum(sensitivity[:0:-1], axis=0)[::-1]
            values = np.broadcast_to(self.constant_values[:, None, :], (self.n_atoms, n_steps + 1, d))
        else:
            values = self.model.shot_values(path)
            jac = self.model.shot_jacobians(path)  # (K, N+1, d, d)
            a_left = np.einsum('lk,klij->lij', weights, jac[:, :-1])
            a_right = np.einsum('lk,klij->lij', weights, jac[:, 1:])
            eye = np.eye(d)
            for i in range(n_steps, 0, -1):
                rhs = -sensitivity[i]
                if i < n_steps:
                    rhs = rhs + (eye + 0.5 * self.dt[i] * a_left[i]).T @ adjoint[i + 1]
                lhs = (eye - 0.5 * self.dt[i - 1] * a_right[i - 1]).T
                adjoint[i] = np.linalg.solve(lhs, rhs)

        shot_sum = values[:, :-1] + values[:, 1:]  # (K, N, d)
        by_step = -0.5 * self.dt[:, None] * np.einsum('ld,kld->lk', adjoint[1:n_steps + 1], shot_sum)
        by_cell = np.zeros((self.n_cells, self.n_atoms))
        np.add.at(by_cell, self.step_cells, by_step)

        widths = np.diff(self.grid)[:, None]
        grad = g * self.nu[None, :] * by_cell + widths * self.nu[None, :] * u.reshape(g.shape) * g
        return value, grad.ravel()


@dataclass
class _Round:
    round: int
    penalty: float
    cost: float
    residual: float
    inner_iterations: int
    gradient_norm: float
    inner_message: str = ''

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


class RateService:
    """Service for rate-function evaluation: Legendre oracle and constrained minimization"""

    def __init__(self, settings: Optional[Config] = None):
        self.settings = settings or get_settings()

    def legendre_oracle(self, model: ShotNoiseModel, a, horizon: Optional[float] = None) -> float:
        """
        T * Lambda*(a / T) with Lambda(theta) = sum_k (exp(theta . h_k) - 1) nu_k

        Only valid when h(z, x) = h(z); raises InfeasibleError when a lies outside
        the cone spanned by the shot values (rate infinite).
        """
        if not model.state_independent:
            raise InvalidArgumentError("legendre_oracle needs a state-independent model")
        T = require_positive(horizon if horizon is not None else model.horizon, 'horizon')
        a = require_state(a, model.dimension, 'a')
        h = model.shot_values(np.zeros(model.dimension))  # (K, d)
        nu = model.mark_space.weights
        v = a / T

        # a = 0: every atom that moves the state must be switched off
        if not np.any(a > 0):
            return float(T * nu[np.any(h > 0, axis=1)].sum())

        coefficients, gap = nnls(h.T, a)
        if gap > 1e-10 * max(1.0, float(np.linalg.norm(a))):
            logger.warning("Target outside the reachable cone", a=a.tolist(), gap=float(gap))
            raise InfeasibleError("target is not reachable by any control (rate is infinite)",
                                  {'a': a.tolist(), 'distance': float(gap)})

        if model.dimension == 1:
            theta = self._newton_dual(h[:, 0], nu, float(v[0]))
            value = theta * v[0] - float(np.sum(np.expm1(theta * h[:, 0]) * nu))
        else:
            def negative_dual(theta):
                exps = np.exp(h @ theta)
                return -(theta @ v - float(np.sum((exps - 1.0) * nu))), -(v - (exps * nu) @ h)
            result = minimize(negative_dual, np.zeros(model.dimension), jac=True, method='BFGS',
                              options={'gtol': self.settings.LEGENDRE_TOL, 'maxiter': 100 * self.settings.LEGENDRE_MAX_ITER})
            value = -float(result.fun)
        logger.debug("Legendre oracle evaluated", a=a.tolist(), horizon=T, value=T * value)
        return float(T * max(value, 0.0))

    def _newton_dual(self, h: np.ndarray, nu: np.ndarray, v: float) -> float:
        """Damped Newton ascent on theta v - Lambda(theta), d = 1"""
        def dual(theta):
            return theta * v - float(np.sum(np.expm1(theta * h) * nu))

        theta = 0.0
        for _ in range(self.settings.LEGENDRE_MAX_ITER):
            exps = np.exp(theta * h) * nu
            slope = v - float(np.sum(h * exps))
            if abs(slope) <= self.settings.LEGENDRE_TOL * max(1.0, v):
                return theta
            curvature = float(np.sum(h * h * exps))
            step = slope / curvature
            current = dual(theta)
            while dual(theta + step) < current and abs(step) > 1e-16:
                step *= 0.5
            theta += step
        raise ConvergenceError("Legendre Newton iteration did not converge",
                               {'theta': theta, 'residual': abs(slope)})

    def minimize_rate(self, model: ShotNoiseModel, constraint: Constraint, cells: int = 16,
                      constraint_tol: Optional[float] = None, max_rounds: Optional[int] = None,
                      raise_on_failure: bool = True, forward_tol: Optional[float] = None) -> RateResult:
        """
        Minimize L_T(exp(u)) subject to the fluid-path constraint

        Args:
            model: Shot-noise model
            constraint: TerminalConstraint or PathConstraint
            cells: Number J of uniform control cells
            constraint_tol: Sup-norm tolerance on the constraint residual
            max_rounds: Augmented-Lagrangian outer rounds
            raise_on_failure: Raise InfeasibleError instead of returning a
                non-converged result

        Returns:
            RateResult; its cost is an upper bound on the discretized infimum
        """
        s = self.settings
        tol = require_positive(constraint_tol if constraint_tol is not None else s.AL_CONSTRAINT_TOL,
                               'constraint_tol')
        rounds = max_rounds or s.AL_MAX_ROUNDS
        problem = RateProblem(model, constraint, cells, s, forward_tol)

        logger.info("Starting rate minimization", model=model.name, cells=cells,
                    constraint=problem.constraint.describe(), nodes=problem.nodes.size)

        u = np.zeros(problem.size)
        multipliers = np.zeros(problem.targets.size)
        penalty = s.AL_INITIAL_PENALTY
        bounds = [(-LOG_CONTROL_BOUND, LOG_CONTROL_BOUND)] * problem.size
        trace: List[Dict] = []
        previous, residual, converged = math.inf, math.inf, False

        for k in range(1, rounds + 1):
            inner = minimize(problem.objective_and_gradient, u, args=(multipliers, penalty), jac=True,
                             method='L-BFGS-B', bounds=bounds,
                             options={'maxiter': s.INNER_MAX_ITER, 'gtol': s.INNER_GTOL, 'ftol': 1e-15})
            u = inner.x
            c = problem.residual(problem.forward(u))
            residual = float(np.abs(c).max())
            entry = _Round(k, penalty, problem.cost(u), residual, int(inner.nit),
                           float(np.linalg.norm(inner.jac)), str(inner.message))
            trace.append(entry.to_dict())
            logger.debug("Augmented Lagrangian round", **entry.to_dict())

            if residual <= tol:
                converged = True
                break
            multipliers = multipliers + penalty * c
            if residual > 0.25 * previous:
                penalty *= s.AL_PENALTY_GROWTH
            previous = residual

        control = problem.control(u, tag='optimal')
        path = problem.forward(u)
        fluid = FluidSolution(times=problem.grid, values=path[problem.grid_index], nodes=problem.nodes,
                              node_values=path, iterations=(), achieved_tolerance=problem.forward_tol)
        result = RateResult(control=control, cost=cost_lt(control, model.mark_space, model.horizon),
                            fluid=fluid, residual=residual, converged=converged, trace=trace,
                            multipliers=multipliers)

        if not converged:
            logger.error("Rate minimization failed to meet the constraint", residual=residual,
                         rounds=len(trace), cost=result.cost)
            if raise_on_failure:
                raise InfeasibleError(
                    f"constraint residual {residual:.3g} above {tol:.3g} after {len(trace)} rounds; "
                    "the target may be infeasible (rate taken as infinite) or the problem stiff",
                    {'residual': residual, 'rounds': len(trace), 'cost': result.cost, 'penalty': penalty})
        else:
            logger.info("Rate minimization completed", cost=result.cost, residual=residual, rounds=len(trace))
        return result

    def export_tilt(self, result: RateResult) -> Control:
        """The optimal control of a converged result, ready for importance sampling"""
        if not result.converged:
            raise InvalidStateError("cannot export the tilt of a non-converged rate result",
                                    {'residual': result.residual})
        return Control(result.control.time_grid, result.control.values, tag='optimal')
