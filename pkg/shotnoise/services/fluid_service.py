import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.special import xlogy

from config import Config
from shotnoise import get_settings
from shotnoise.errors import ConvergenceError, InvalidArgumentError
from shotnoise.models.control import Control
from shotnoise.models.domain import MarkSpace, ShotNoiseModel
from shotnoise.models.results import FluidSolution
from shotnoise.utils.validation import require_increasing_grid, require_positive

logger = structlog.get_logger(__name__)


def ell(r):
    """l(r) = r log r - r + 1 with 0 log 0 = 0; scalar in, float out"""
    arr = np.asarray(r, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise InvalidArgumentError("ell is defined for finite r >= 0")
    out = xlogy(arr, arr) - arr + 1.0
    return float(out) if out.ndim == 0 else out


def cost_lt(control: Control, mark_space: MarkSpace, horizon: float) -> float:
    """L_T(g) = sum_j dt_j sum_k nu_k l(g_jk), exact for piecewise-constant g"""
    if not control.matches(horizon, len(mark_space)):
        raise InvalidArgumentError("control does not match the mark space and horizon")
    mass = control.widths[:, None] * mark_space.weights[None, :]
    return float(np.sum(mass * ell(control.values)))


def deviation_ratio_bound(beta: float, points: int = 200_001) -> float:
    """sup |x - 1| / l(x) over x >= 0 with |x - 1| >= beta, on a fine grid"""
    beta = require_positive(beta, 'beta')
    upper = 1.0 + beta + np.geomspace(1e-12, 1e6 * (1.0 + beta), points)
    upper = np.concatenate([[1.0 + beta], upper])
    candidates = [np.max(np.abs(upper - 1.0) / ell(upper))]
    if beta < 1.0:
        lower = np.linspace(0.0, 1.0 - beta, points)
        candidates.append(np.max(np.abs(lower - 1.0) / ell(lower)))
    return float(max(candidates))


def excess_ratio_bound(beta: float, points: int = 200_001) -> float:
    """sup x / l(x) over x >= beta > 1, on a fine grid"""
    beta = require_positive(beta, 'beta')
    if beta <= 1.0:
        raise InvalidArgumentError(f"beta must exceed 1, got {beta}")
    x = np.concatenate([[beta], beta + np.geomspace(1e-12, 1e6 * beta, points)])
    return float(np.max(x / ell(x)))


def quadrature_nodes(control: Control, cell_rates: np.ndarray, max_step: float, subnodes: int,
                     target: float, extra_times: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Uniform refinement of every control cell: at least `subnodes` steps, no step
    longer than max_step, and every step's contraction increment <= target/2.
    extra_times are inserted as additional nodes.
    """
    pieces = []
    for j, width in enumerate(control.widths):
        n = max(subnodes,
                math.ceil(width / max_step - 1e-9),
                math.ceil(2.0 * cell_rates[j] * width / target))
        pieces.append(np.linspace(control.time_grid[j], control.time_grid[j + 1], n + 1)[:-1])
    pieces.append([control.horizon])
    nodes = np.concatenate(pieces)
    if extra_times is not None:
        extra = np.asarray(extra_times, dtype=float)
        nodes = np.union1d(nodes, extra[(extra >= 0.0) & (extra <= control.horizon)])
    return nodes


def step_weights(control: Control, mark_space: MarkSpace, nodes: np.ndarray) -> np.ndarray:
    """g(s, k) nu_k frozen on every quadrature step; shape (steps, K)"""
    return control.values[control.cell_index(nodes[:-1])] * mark_space.weights[None, :]


def contraction_blocks(step_kappa: np.ndarray, target: float) -> List[Tuple[int, int]]:
    """Greedy split of the steps into consecutive blocks with summed kappa <= target"""
    blocks, start, acc = [], 0, 0.0
    for l, kappa in enumerate(step_kappa):
        if l > start and acc + kappa > target:
            blocks.append((start, l))
            start, acc = l, 0.0
        acc += kappa
    blocks.append((start, len(step_kappa)))
    return blocks


def drift(model: ShotNoiseModel, weights: np.ndarray, states: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    sum_k w_lk h(z_k, x) evaluated at both ends of every step; states has one
    more row than weights
    """
    values = model.shot_values(states)  # (K, n + 1, d)
    left = np.einsum('lk,kld->ld', weights, values[:, :-1])
    right = np.einsum('lk,kld->ld', weights, values[:, 1:])
    return left, right


def integrate_on_nodes(model: ShotNoiseModel, nodes: np.ndarray, weights: np.ndarray, tol: float,
                       max_iter: int, target: float) -> Tuple[np.ndarray, Tuple[int, ...], float, Tuple[float, ...]]:
    """
    Implicit trapezoid discretization of xi(t) = int_0^t sum_k h(z_k, xi) w_k ds,
    solved by Picard iteration block by block.

    Returns:
        (node values, iterations per block, largest final sup-change, block edges)
    """
    d = model.dimension
    dt = np.diff(nodes)
    step_kappa = dt * (weights @ model.lipschitz_vector())
    blocks = contraction_blocks(step_kappa, target)
    x = np.zeros((nodes.size, d))
    iterations, achieved = [], 0.0

    for a, b in blocks:
        w = weights[a:b]
        half = 0.5 * dt[a:b, None]
        segment = np.repeat(x[a:a + 1], b - a + 1, axis=0)
        kappa = float(step_kappa[a:b].sum())
        count, change = 0, math.inf
        while True:
            count += 1
            left, right = drift(model, w, segment)
            updated = segment.copy()
            updated[1:] = segment[0] + np.cumsum(half * (left + right), axis=0)
            change = float(np.linalg.norm(updated - segment, axis=1).max())
            segment = updated
            floor = 16.0 * np.finfo(float).eps * max(1.0, float(np.abs(segment).max()))
            if model.state_independent or change <= max(tol, floor):
                break
            if count >= max_iter:
                logger.error("Picard iteration did not converge", block=(float(nodes[a]), float(nodes[b])),
                             kappa=kappa, residual=change, iterations=count)
                raise ConvergenceError(
                    f"Picard iteration did not reach tol={tol} on [{nodes[a]}, {nodes[b]}] "
                    f"in {max_iter} iterations",
                    {'kappa': kappa, 'residual': change, 'iterations': count})
        logger.debug("Picard block converged", start=float(nodes[a]), end=float(nodes[b]),
                     kappa=kappa, iterations=count, change=change)
        x[a:b + 1] = segment
        iterations.append(count)
        achieved = max(achieved, 0.0 if model.state_independent else change)

    edges = tuple(float(nodes[a]) for a, _ in blocks) + (float(nodes[-1]),)
    return x, tuple(iterations), achieved, edges


class FluidService:
    """Service for the controlled fluid integral equation and its entropy cost"""

    def __init__(self, settings: Optional[Config] = None):
        self.settings = settings or get_settings()

    def build_nodes(self, model: ShotNoiseModel, control: Control, max_step_fraction: float,
                    extra_times: Optional[Sequence[float]] = None) -> np.ndarray:
        s = self.settings
        rates = control.values @ (model.mark_space.weights * model.lipschitz_vector())
        return quadrature_nodes(control, rates, max_step_fraction * model.horizon, s.QUADRATURE_SUBNODES,
                                s.CONTRACTION_TARGET, extra_times)

    def solve_controlled_ode(self, model: ShotNoiseModel, control: Optional[Control] = None,
                             tol: Optional[float] = None, grid: Optional[np.ndarray] = None) -> FluidSolution:
        """
        Solve xi(t) = int_0^t sum_k h(z_k, xi(s)) g(s,k) nu_k ds

        Args:
            model: Shot-noise model supplying h and its Lipschitz envelope
            control: Piecewise-constant tilt g; None means g = 1
            tol: Picard stopping tolerance on successive sup-changes
            grid: Output times in [0, T]; every one becomes a quadrature node

        Returns:
            FluidSolution on the output grid and on the quadrature nodes

        Raises:
            ConvergenceError: a contraction block needed more than PICARD_MAX_ITER sweeps
        """
        T = model.horizon
        control = control if control is not None else Control.unit(T, len(model.atoms))
        if not control.matches(T, len(model.atoms)):
            raise InvalidArgumentError("control does not match the model horizon and atoms")
        tol = require_positive(tol if tol is not None else self.settings.PICARD_TOL, 'tol')
        if grid is None:
            grid = np.linspace(0.0, T, self.settings.OUTPUT_GRID_POINTS + 1)
        else:
            grid = require_increasing_grid(grid, 0.0, T)

        nodes = self.build_nodes(model, control, self.settings.QUADRATURE_MAX_STEP, grid)
        weights = step_weights(control, model.mark_space, nodes)
        logger.info("Solving controlled fluid equation", model=model.name, nodes=nodes.size,
                    cells=control.n_cells, tol=tol)

        node_values, iterations, achieved, edges = integrate_on_nodes(
            model, nodes, weights, tol, self.settings.PICARD_MAX_ITER, self.settings.CONTRACTION_TARGET)

        values = node_values[np.searchsorted(nodes, grid)]
        logger.info("Fluid solve completed", blocks=len(iterations), max_iterations=max(iterations),
                    achieved_tolerance=achieved)
        return FluidSolution(times=grid, values=values, nodes=nodes, node_values=node_values,
                             iterations=iterations, achieved_tolerance=achieved, block_edges=edges)

    def fluid_residual(self, model: ShotNoiseModel, control: Optional[Control],
                       solution: FluidSolution) -> float:
        """
        max over the solution nodes of ||xi(t) - int_0^t sum_k h(z_k, xi) g nu_k ds||,
        with the integral re-evaluated on the nodes refined by their midpoints
        """
        control = control if control is not None else Control.unit(model.horizon, len(model.atoms))
        nodes = solution.nodes
        refined = np.empty(2 * nodes.size - 1)
        refined[0::2] = nodes
        refined[1::2] = 0.5 * (nodes[:-1] + nodes[1:])
        states = solution.at(refined)
        left, right = drift(model, step_weights(control, model.mark_space, refined), states)
        integral = np.vstack([np.zeros((1, model.dimension)),
                              np.cumsum(0.5 * np.diff(refined)[:, None] * (left + right), axis=0)])
        gap = solution.node_values - integral[0::2]
        return float(np.linalg.norm(gap, axis=1).max())
