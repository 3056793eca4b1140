import math
from typing import Callable, Optional

import numpy as np
import structlog

from config import Config
from shotnoise import get_settings
from shotnoise.errors import DegenerateWeightError, InvalidArgumentError
from shotnoise.models.control import Control
from shotnoise.models.domain import MarkSpace, ShotNoiseModel
from shotnoise.models.results import EventSet, FluidSolution, Path
from shotnoise.services.model_service import scaled_shot
from shotnoise.utils.rng import make_generator
from shotnoise.utils.validation import require_increasing_grid, require_positive, require_seed

logger = structlog.get_logger(__name__)


def _check_control(control: Control, mark_space: MarkSpace, horizon: float) -> None:
    if not control.matches(horizon, len(mark_space)):
        raise InvalidArgumentError(
            f"control covers [0, {control.horizon}] x {control.n_atoms} atoms, "
            f"model needs [0, {horizon}] x {len(mark_space)}")


class SimulationService:
    """Service for realizing controlled Poisson random measures and scaled shot-noise paths"""

    def __init__(self, settings: Optional[Config] = None):
        self.settings = settings or get_settings()

    def simulate_prm(self, mark_space: MarkSpace, horizon: float, epsilon: float,
                     control: Optional[Control] = None, seed: int = 0, stream: int = 0) -> EventSet:
        """
        Realize the PRM with intensity eps^-1 g(s,z) nu(dz) ds on [0,T] x marks

        Args:
            mark_space: Finite atomic mark space
            horizon: T
            epsilon: Scale eps
            control: Piecewise-constant g; None means g = 1
            seed: 64-bit seed
            stream: Replication index selecting an independent random stream

        Returns:
            Time-sorted EventSet; identical for identical inputs
        """
        horizon = require_positive(horizon, 'horizon')
        epsilon = require_positive(epsilon, 'epsilon')
        seed = require_seed(seed)
        control = control if control is not None else Control.unit(horizon, len(mark_space))
        _check_control(control, mark_space, horizon)

        cells = control.coalesced()
        rng = make_generator(seed, stream)
        widths = cells.widths
        means = cells.values * mark_space.weights[None, :] * widths[:, None] / epsilon
        counts = rng.poisson(means)

        n_atoms = len(mark_space)
        flat = np.repeat(np.arange(counts.size), counts.ravel())
        cell, atoms = np.divmod(flat, n_atoms)
        times = cells.time_grid[cell] + widths[cell] * rng.random(flat.size)
        order = np.argsort(times, kind='stable')

        return EventSet(
            epsilon=epsilon,
            times=times[order],
            atoms=atoms[order],
            atom_ids=mark_space.ids,
            horizon=horizon,
            seed=seed,
            stream=stream,
            control_tag=None if control.is_identity() else (control.tag or 'custom'),
        )

    def simulate_prm_thinning(self, mark_space: MarkSpace, horizon: float, epsilon: float,
                              intensity: Callable[[np.ndarray, int], np.ndarray], g_bar: float,
                              seed: int = 0, stream: int = 0) -> EventSet:
        """
        Controlled PRM for an arbitrary bounded control g(s, k) <= g_bar, by thinning
        a homogeneous PRM of rate eps^-1 g_bar nu_k
        """
        horizon = require_positive(horizon, 'horizon')
        epsilon = require_positive(epsilon, 'epsilon')
        g_bar = require_positive(g_bar, 'g_bar')
        rng = make_generator(require_seed(seed), stream)

        all_times, all_atoms = [], []
        for k, weight in enumerate(mark_space.weights):
            n = rng.poisson(g_bar * weight * horizon / epsilon)
            candidates = horizon * rng.random(n)
            g = np.asarray(intensity(candidates, k), dtype=float)
            if g.shape != candidates.shape or np.any(~np.isfinite(g)) or np.any(g < 0) or np.any(g > g_bar):
                raise InvalidArgumentError(f"intensity must lie in [0, g_bar={g_bar}] at every candidate point")
            keep = rng.random(n) * g_bar < g
            all_times.append(candidates[keep])
            all_atoms.append(np.full(int(keep.sum()), k))

        times = np.concatenate(all_times)
        atoms = np.concatenate(all_atoms).astype(np.int64)
        order = np.argsort(times, kind='stable')
        return EventSet(epsilon, times[order], atoms[order], mark_space.ids, horizon, seed, stream, 'thinned')

    def default_grid(self, horizon: float, events: EventSet) -> np.ndarray:
        """Uniform output grid, joined by the event times while there are not too many"""
        grid = np.linspace(0.0, horizon, self.settings.OUTPUT_GRID_POINTS + 1)
        if len(events) <= self.settings.MAX_EVENT_GRID:
            grid = np.union1d(grid, events.times)
        return grid

    def evolve_scaled_path(self, model: ShotNoiseModel, events: EventSet,
                           grid: Optional[np.ndarray] = None) -> Path:
        """
        X^eps(t) = eps * sum_{s_i <= t} H_eps((t - s_i)/eps, z_i, X^eps(s_i-)/eps)

        Frozen states X^eps(s_i-) are computed once in event order; grid values are
        direct evaluations. Instantaneous shapes use a running sum.
        """
        T = model.horizon
        if events.atom_ids != model.mark_space.ids:
            raise InvalidArgumentError("event set was drawn on a different mark space")
        if len(events) and (events.times[0] < 0 or events.times[-1] > T):
            raise InvalidArgumentError(f"event outside [0, {T}]")
        if len(events) > 1 and np.any(np.diff(events.times) < 0):
            raise InvalidArgumentError("events must be sorted by time")

        if grid is None:
            grid = self.default_grid(T, events)
        else:
            grid = require_increasing_grid(grid, 0.0, T)
            if grid[0] != 0.0:
                raise InvalidArgumentError("output grid must start at 0")

        if model.instantaneous:
            values = self._evolve_instantaneous(model, events, grid)
        else:
            values = self._evolve_general(model, events, grid)
        return Path(epsilon=events.epsilon, grid=grid, values=values, events=events)

    def _evolve_instantaneous(self, model: ShotNoiseModel, events: EventSet, grid: np.ndarray) -> np.ndarray:
        eps = events.epsilon
        d = model.dimension
        n = len(events)
        if model.state_independent:
            jumps = np.stack([scaled_shot(model, eps, np.inf, atom, np.zeros(d)) for atom in model.atoms])
            running = np.vstack([np.zeros((1, d)), np.cumsum(jumps[events.atoms], axis=0)])
        else:
            # strictly earlier events only; ties contribute at age 0, where every shape vanishes
            earlier = np.searchsorted(events.times, events.times, side='left')
            running = np.zeros((n + 1, d))
            for i in range(n):
                state = eps * running[earlier[i]]
                running[i + 1] = running[i] + scaled_shot(model, eps, np.inf, model.atoms[events.atoms[i]], state)
        return eps * running[np.searchsorted(events.times, grid, side='left')]

    def _evolve_general(self, model: ShotNoiseModel, events: EventSet, grid: np.ndarray) -> np.ndarray:
        eps = events.epsilon
        d = model.dimension
        n = len(events)
        s = events.times
        at_events = np.zeros((n, d))
        at_grid = np.zeros((grid.size, d))
        for m in range(n):
            atom = model.atoms[events.atoms[m]]
            state = eps * at_events[m]
            if m + 1 < n:
                at_events[m + 1:] += scaled_shot(model, eps, (s[m + 1:] - s[m]) / eps, atom, state)
            first = np.searchsorted(grid, s[m], side='left')
            if first < grid.size:
                at_grid[first:] += scaled_shot(model, eps, (grid[first:] - s[m]) / eps, atom, state)
        return eps * at_grid

    def log_likelihood_weight(self, events: EventSet, control: Control, mark_space: MarkSpace,
                              horizon: float) -> float:
        """log dP/dQ for a realization drawn under intensity eps^-1 g"""
        _check_control(control, mark_space, horizon)
        g_at_events = control.value_at(events.times, events.atoms)
        if np.any(g_at_events <= 0):
            raise DegenerateWeightError("tilt vanishes at a realized event", {'events': int(np.sum(g_at_events <= 0))})
        compensator = float(np.sum((control.values - 1.0) * mark_space.weights[None, :] * control.widths[:, None]))
        return float(-np.sum(np.log(g_at_events)) + compensator / events.epsilon)

    def likelihood_weight(self, events: EventSet, control: Control, mark_space: MarkSpace,
                          horizon: float) -> float:
        """
        exp{ sum_i log(1/g(s_i,z_i)) + eps^-1 int (g - 1) dnu_T }, the weight that makes a
        realization under the tilted intensity an unbiased sample of the original law
        """
        log_weight = self.log_likelihood_weight(events, control, mark_space, horizon)
        if log_weight > 709.0:
            logger.warning("Likelihood weight overflows", log_weight=log_weight)
        return math.exp(log_weight) if log_weight <= 709.0 else math.inf

    def sup_distance(self, path: Path, solution: FluidSolution) -> float:
        """||X^eps - xi||_{*,T} over the path grid joined with the fluid nodes"""
        horizon = path.grid[-1]
        times = np.union1d(path.grid, solution.nodes[solution.nodes <= horizon])
        # between grid points the path is read at the next grid point (left-continuous steps)
        idx = np.searchsorted(path.grid, times, side='left')
        gap = path.values[idx] - solution.at(times)
        return float(np.linalg.norm(gap, axis=1).max())
