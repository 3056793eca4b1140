import math
from typing import Dict, Optional, Union

import numpy as np
import structlog

from config import Config
from shotnoise import get_settings
from shotnoise.errors import InvalidArgumentError
from shotnoise.models.domain import CheckGrid, CheckResult, MarkAtom, ShotNoiseModel, ValidationReport
from shotnoise.utils.validation import require_nonnegative, require_positive, require_state

logger = structlog.get_logger(__name__)

# relative slack for sampled inequality checks
CHECK_RTOL = 1e-9
CHECK_ATOL = 1e-12


def resolve_atom(model: ShotNoiseModel, mark: Union[MarkAtom, str, int]) -> MarkAtom:
    if isinstance(mark, MarkAtom):
        return mark
    if isinstance(mark, str):
        return model.atoms[model.mark_space.index_of(mark)]
    if isinstance(mark, (int, np.integer)) and 0 <= int(mark) < len(model.atoms):
        return model.atoms[int(mark)]
    raise InvalidArgumentError(f"unknown mark {mark!r}")


def scaled_shot(model: ShotNoiseModel, eps: float, elapsed, atom: MarkAtom, state: np.ndarray) -> np.ndarray:
    """
    Hbar(t, z, X) + R_eps(t, z, X) clamped at 0, where X = eps * x is the
    scaled state. elapsed may be an array of shot ages.
    """
    raw = np.asarray(model.hbar(elapsed, atom, state), dtype=float) \
        + np.asarray(model.remainder(eps, elapsed, atom, state), dtype=float)
    return np.maximum(raw, 0.0)


def evaluate_shot(model: ShotNoiseModel, eps: float, t: float, mark, x) -> np.ndarray:
    """H_eps(t, z, x) = Hbar(t, z, eps x) + R_eps(t, z, eps x), clamped coordinate-wise at 0"""
    eps = require_positive(eps, 'epsilon')
    t = require_nonnegative(t, 't')
    x = require_state(x, model.dimension)
    atom = resolve_atom(model, mark)
    return scaled_shot(model, eps, t, atom, eps * x)


def _excess(lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return lhs - rhs - (CHECK_RTOL * np.abs(rhs) + CHECK_ATOL)


class ModelService:
    """Service for linting shot-noise models against the standing shot conditions"""

    def __init__(self, settings: Optional[Config] = None):
        self.settings = settings or get_settings()

    def default_grid(self, model: ShotNoiseModel) -> CheckGrid:
        s = self.settings
        return CheckGrid.default(model, epsilons=s.CHECK_EPSILONS, n_times=s.CHECK_TIMES,
                                 n_states=s.CHECK_STATES, state_bound=s.CHECK_STATE_BOUND, seed=s.CHECK_SEED)

    def validate_model(self, model: ShotNoiseModel, grid: Optional[CheckGrid] = None) -> ValidationReport:
        """
        Sampled check of the shot conditions (a), (b), (d), (f), (g)

        Args:
            model: The model to lint
            grid: Sample sets of times, states, state pairs and epsilons;
                defaults to the configured grid

        Returns:
            ValidationReport with one CheckResult per condition; the model is
            accepted iff every check passes
        """
        grid = grid or self.default_grid(model)
        if grid.is_empty():
            raise InvalidArgumentError("check grid must contain times, states, pairs and epsilons")

        logger.info("Starting model validation", model=model.name, atoms=len(model.atoms),
                    times=grid.times.size, states=len(grid.states))

        checks = [
            self._check_codomain(model, grid),
            self._check_remainder_bound(model, grid),
            self._check_monotone_shape(model, grid),
            self._check_lipschitz(model, grid),
            self._check_growth(model, grid),
        ]
        report = ValidationReport(checks)

        for check in checks:
            if not check.passed:
                logger.warning("Model condition violated", condition=check.condition,
                               worst_violation=check.worst_violation, witness=check.witness)
        logger.info("Model validation completed", accepted=report.accepted)
        return report

    def _check_codomain(self, model: ShotNoiseModel, grid: CheckGrid) -> CheckResult:
        """Condition (a): Hbar + R_eps maps into R_+^d before clamping"""
        worst, witness = 0.0, {}
        finite = True
        for eps in grid.epsilons:
            for atom in model.atoms:
                for x in grid.states:
                    raw = np.asarray(model.hbar(grid.times, atom, x)) \
                        + np.asarray(model.remainder(eps, grid.times, atom, x))
                    if not np.all(np.isfinite(raw)):
                        finite = False
                    negative = -raw.min()
                    if negative > worst:
                        i = int(np.unravel_index(np.argmin(raw), raw.shape)[0])
                        worst = float(negative)
                        witness = {'epsilon': float(eps), 't': float(grid.times[i]),
                                   'atom': atom.id, 'x': x.tolist()}
        passed = finite and worst <= CHECK_ATOL
        return CheckResult('a', 'Shot decomposition maps into R_+^d', passed, worst, witness,
                           'Hbar(t,z,x) + R_eps(t,z,x) >= 0 and finite; negatives are clamped by evaluate_shot')

    def _check_remainder_bound(self, model: ShotNoiseModel, grid: CheckGrid) -> CheckResult:
        """Condition (b): ||R_eps(t,z,x)|| <= varsigma(z) (||x|| + 1)"""
        worst, excess_max, witness = -math.inf, -math.inf, {}
        for eps in grid.epsilons:
            for atom in model.atoms:
                bound_coeff = model.varsigma(atom)
                for x in grid.states:
                    lhs = np.linalg.norm(np.asarray(model.remainder(eps, grid.times, atom, x)), axis=-1)
                    rhs = np.full_like(lhs, bound_coeff * (np.linalg.norm(x) + 1.0))
                    excess = _excess(lhs, rhs)
                    i = int(np.argmax(excess))
                    if excess[i] > excess_max:
                        excess_max = float(excess[i])
                        worst = float(lhs[i] - rhs[i])
                        witness = {'epsilon': float(eps), 't': float(grid.times[i]),
                                   'atom': atom.id, 'x': x.tolist()}
        return CheckResult('b', 'Remainder envelope', excess_max <= 0, max(worst, 0.0), witness,
                           'sup_t ||R_eps(t,z,x)|| <= varsigma(z)(||x||+1)')

    def _check_monotone_shape(self, model: ShotNoiseModel, grid: CheckGrid) -> CheckResult:
        """Condition (d): Hbar(0,z,x) = 0 and t -> Hbar(t,z,x) non-decreasing"""
        times = np.concatenate([[0.0], np.sort(grid.times)])
        worst, witness = 0.0, {}
        for atom in model.atoms:
            for x in grid.states:
                values = np.asarray(model.hbar(times, atom, x), dtype=float)
                at_zero = float(np.abs(values[0]).max())
                if at_zero > worst:
                    worst = at_zero
                    witness = {'t': 0.0, 'atom': atom.id, 'x': x.tolist(), 'value': values[0].tolist()}
                drops = values[:-1] - values[1:]
                i, j = np.unravel_index(np.argmax(drops), drops.shape)
                if drops[i, j] > worst:
                    worst = float(drops[i, j])
                    witness = {'t1': float(times[i]), 't2': float(times[i + 1]), 'atom': atom.id,
                               'x': x.tolist(), 'coordinate': int(j)}
        passed = worst <= CHECK_ATOL
        return CheckResult('d', 'Shot shape starts at 0 and is non-decreasing', passed, worst, witness,
                           'Hbar(0,z,x) = 0 and Hbar(t1,z,x) <= Hbar(t2,z,x) for sampled t1 < t2')

    def _check_lipschitz(self, model: ShotNoiseModel, grid: CheckGrid) -> CheckResult:
        """Condition (f): ||h(z,x) - h(z,x')|| <= L_h(z) ||x - x'||"""
        left, right = grid.pairs[:, 0, :], grid.pairs[:, 1, :]
        return self._envelope_check(
            model, 'f', 'Shot value Lipschitz envelope',
            lambda atom: np.linalg.norm(model.shot_value(atom, left) - model.shot_value(atom, right), axis=-1),
            lambda atom: model.lipschitz(atom) * np.linalg.norm(left - right, axis=-1),
            lambda i: {'x': left[i].tolist(), 'x_prime': right[i].tolist()},
            "||h(z,x)-h(z,x')|| <= L_h(z)||x-x'||")

    def _check_growth(self, model: ShotNoiseModel, grid: CheckGrid) -> CheckResult:
        """Condition (g): ||h(z,x)|| <= M_h(z) (1 + ||x||)"""
        states = grid.states
        return self._envelope_check(
            model, 'g', 'Shot value growth envelope',
            lambda atom: np.linalg.norm(model.shot_value(atom, states), axis=-1),
            lambda atom: model.growth(atom) * (1.0 + np.linalg.norm(states, axis=-1)),
            lambda i: {'x': states[i].tolist()},
            "||h(z,x)|| <= M_h(z)(1+||x||)")

    def _envelope_check(self, model, condition, title, lhs_fn, rhs_fn, witness_fn, details) -> CheckResult:
        worst, excess_max, witness = -math.inf, -math.inf, {}
        for atom in model.atoms:
            lhs = np.asarray(lhs_fn(atom), dtype=float)
            rhs = np.asarray(rhs_fn(atom), dtype=float)
            excess = _excess(lhs, rhs)
            i = int(np.argmax(excess))
            if excess[i] > excess_max:
                excess_max = float(excess[i])
                worst = float(lhs[i] - rhs[i])
                witness = {'atom': atom.id, **witness_fn(i)}
        return CheckResult(condition, title, excess_max <= 0, max(worst, 0.0), witness, details)

    def check_shot_value_limit(self, model: ShotNoiseModel, mark, state_bound: float, t_max: float,
                               n_states: Optional[int] = None) -> float:
        """
        Sampled sup over t in [t_max, 1.5 t_max] and ||x|| <= m of ||Hbar(t,z,x) - h(z,x)||;
        shrinks towards 0 as t_max grows when condition (e) holds
        """
        m = require_positive(state_bound, 'state bound m')
        t_max = require_positive(t_max, 't_max')
        atom = resolve_atom(model, mark)
        states = self._ball_samples(model.dimension, m, n_states or self.settings.CHECK_STATES)
        times = t_max * (1.0 + np.linspace(0.0, 0.5, 6))

        deviation = 0.0
        for x in states:
            gap = np.asarray(model.hbar(times, atom, x)) - np.asarray(model.shot_value(atom, x))
            deviation = max(deviation, float(np.linalg.norm(gap, axis=-1).max()))
        logger.debug("Shot value limit gap", atom=atom.id, t_max=t_max, deviation=deviation)
        return deviation

    def _ball_samples(self, dimension: int, radius: float, n: int) -> np.ndarray:
        """The origin, points on the sphere of the given radius, and uniform interior points"""
        rng = np.random.default_rng(self.settings.CHECK_SEED)
        directions = np.abs(rng.normal(size=(n, dimension)))
        directions /= np.maximum(np.linalg.norm(directions, axis=1, keepdims=True), 1e-300)
        radii = radius * rng.uniform(size=(n, 1)) ** (1.0 / dimension)
        radii[: max(1, n // 4)] = radius
        return np.vstack([np.zeros((1, dimension)), directions * radii])

    def describe(self, model: ShotNoiseModel) -> Dict:
        """Summary of a model for manifests and logs"""
        return {
            'name': model.name,
            'dimension': model.dimension,
            'horizon': model.horizon,
            'atoms': [{'id': a.id, 'payload': list(a.payload), 'weight': a.weight} for a in model.atoms],
            'total_mass': model.mark_space.total_mass,
            'instantaneous': model.instantaneous,
            'state_independent': model.state_independent,
        }
