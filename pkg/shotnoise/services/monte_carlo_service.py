import math
import time
from typing import List, Optional, Sequence

import numpy as np
import structlog
from scipy.special import gammaln
from scipy.stats import beta

from config import Config
from shotnoise import get_settings
from shotnoise.errors import InvalidArgumentError
from shotnoise.models.control import Control
from shotnoise.models.domain import ShotNoiseModel
from shotnoise.models.results import DecayTable, EventSet, MCReport, RareEvent
from shotnoise.services.fluid_service import FluidService
from shotnoise.services.rate_service import RateService, TerminalConstraint
from shotnoise.services.simulation_service import SimulationService
from shotnoise.utils.validation import require_positive, require_seed
from shotnoise.utils.workers import run_indexed

logger = structlog.get_logger(__name__)

METHODS = ('naive', 'is', 'exact')


def _log_pmf(mean: float, j: int) -> float:
    return j * math.log(mean) - mean - float(gammaln(j + 1))


def poisson_tail_exact(mean: float, k: int) -> float:
    """
    P(N >= k) for N ~ Poisson(mean)

    Below the mean the complement of the lower sum is used; above it the upper
    tail is summed directly starting from the log pmf at k, so deep tails keep
    full relative accuracy.
    """
    mean = require_positive(mean, 'mean')
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 0:
        raise InvalidArgumentError(f"k must be a nonnegative integer, got {k!r}")
    k = int(k)
    if k == 0:
        return 1.0
    if k <= mean:
        lower = math.fsum(math.exp(_log_pmf(mean, j)) for j in range(k))
        return max(0.0, 1.0 - lower)

    terms = [1.0]
    term, j = 1.0, k
    while True:
        j += 1
        term *= mean / j
        terms.append(term)
        if term < 1e-17 * terms[0]:
            break
    return math.exp(_log_pmf(mean, k)) * math.fsum(terms)


def clopper_pearson_upper(hits: int, trials: int, level: float = 0.95) -> float:
    """One-sided upper confidence bound for a binomial proportion"""
    if hits >= trials:
        return 1.0
    return float(beta.ppf(level, hits + 1, trials - hits))


def _relative_error(estimate: float, standard_error: float) -> float:
    return standard_error / estimate if estimate > 0 else math.inf


class MonteCarloService:
    """Service for rare-event probability estimation and decay-rate tables"""

    def __init__(self, settings: Optional[Config] = None):
        self.settings = settings or get_settings()
        self.simulation = SimulationService(self.settings)

    def _check_replications(self, replications: int) -> int:
        minimum = self.settings.MC_MIN_REPLICATIONS
        if isinstance(replications, bool) or not isinstance(replications, (int, np.integer)) \
                or replications < minimum:
            raise InvalidArgumentError(f"replications must be an integer >= {minimum}, got {replications!r}")
        return int(replications)

    def _check_event(self, model: ShotNoiseModel, event: RareEvent) -> None:
        if event.transform is None and len(event.thresholds) != model.dimension:
            raise InvalidArgumentError(
                f"event needs {model.dimension} thresholds (None for a free coordinate), got {len(event.thresholds)}")

    def terminal_state(self, model: ShotNoiseModel, events: EventSet) -> np.ndarray:
        grid = np.array([0.0, model.horizon])
        return self.simulation.evolve_scaled_path(model, events, grid).terminal

    def estimate_naive(self, model: ShotNoiseModel, epsilon: float, event: RareEvent, replications: int,
                       seed: int = 0, threads: Optional[int] = None) -> MCReport:
        """
        Crude estimate R^-1 sum 1{X^eps_r(T) in A} with SE sqrt(p(1-p)/R)

        Replication r uses random stream r of the seed, so the report does not
        depend on the number of threads.
        """
        epsilon = require_positive(epsilon, 'epsilon')
        replications = self._check_replications(replications)
        seed = require_seed(seed)
        self._check_event(model, event)
        workers = threads or self.settings.THREADS
        slack = self.settings.THRESHOLD_SLACK
        started = time.perf_counter()

        def replicate(r: int) -> bool:
            events = self.simulation.simulate_prm(model.mark_space, model.horizon, epsilon, None, seed, r)
            return bool(event.contains(self.terminal_state(model, events), slack)[0])

        hits = int(sum(run_indexed(replicate, range(replications), workers)))
        estimate = hits / replications
        standard_error = math.sqrt(estimate * (1.0 - estimate) / replications)
        report = MCReport(
            epsilon=epsilon,
            event=event.describe(),
            replications=replications,
            estimate=estimate,
            standard_error=standard_error,
            relative_error=_relative_error(estimate, standard_error),
            method='naive',
            seed=seed,
            wall_time=time.perf_counter() - started,
            workers=workers,
            hits=hits,
            upper_bound=clopper_pearson_upper(hits, replications),
        )
        if hits == 0:
            logger.warning("No hits in naive estimate", epsilon=epsilon, replications=replications,
                           upper_bound=report.upper_bound)
        logger.info("Naive estimate completed", epsilon=epsilon, estimate=estimate, se=standard_error,
                    wall_time=report.wall_time)
        return report

    def estimate_is(self, model: ShotNoiseModel, epsilon: float, event: RareEvent, tilt: Control,
                    replications: int, seed: int = 0, threads: Optional[int] = None) -> MCReport:
        """
        Importance-sampling estimate: mean of 1{Xbar^eps(T) in A} * weight over
        paths driven by intensity eps^-1 g nu; SE from the weighted second moment
        """
        epsilon = require_positive(epsilon, 'epsilon')
        replications = self._check_replications(replications)
        seed = require_seed(seed)
        self._check_event(model, event)
        if not tilt.matches(model.horizon, len(model.atoms)):
            raise InvalidArgumentError("tilt does not match the model horizon and atoms")
        if np.any(tilt.values <= 0):
            raise InvalidArgumentError("tilt must be positive on every cell")
        workers = threads or self.settings.THREADS
        slack = self.settings.THRESHOLD_SLACK
        started = time.perf_counter()

        def replicate(r: int) -> float:
            events = self.simulation.simulate_prm(model.mark_space, model.horizon, epsilon, tilt, seed, r)
            if not event.contains(self.terminal_state(model, events), slack)[0]:
                return 0.0
            return self.simulation.likelihood_weight(events, tilt, model.mark_space, model.horizon)

        values = np.asarray(run_indexed(replicate, range(replications), workers))
        estimate = float(values.mean())
        standard_error = float(values.std(ddof=1) / math.sqrt(replications))
        report = MCReport(
            epsilon=epsilon,
            event=event.describe(),
            replications=replications,
            estimate=estimate,
            standard_error=standard_error,
            relative_error=_relative_error(estimate, standard_error),
            method='is',
            seed=seed,
            wall_time=time.perf_counter() - started,
            workers=workers,
            hits=int(np.count_nonzero(values)),
        )
        logger.info("Importance-sampling estimate completed", epsilon=epsilon, estimate=estimate,
                    se=standard_error, tilt=tilt.tag, wall_time=report.wall_time)
        return report

    def estimate_exact(self, model: ShotNoiseModel, epsilon: float, event: RareEvent) -> MCReport:
        """
        Exact probability for one-atom instantaneous models with constant shots:
        X^eps(T) = eps N h with N ~ Poisson(nu T / eps)
        """
        epsilon = require_positive(epsilon, 'epsilon')
        self._check_event(model, event)
        if len(model.atoms) != 1 or not model.state_independent or not model.instantaneous:
            raise InvalidArgumentError("exact tails need a one-atom, state-independent, instantaneous model")
        if event.transform is not None:
            raise InvalidArgumentError("exact tails do not support terminal transforms")

        atom = model.atoms[0]
        h = np.asarray(model.shot_value(atom, np.zeros(model.dimension)), dtype=float)
        mean = atom.weight * model.horizon / epsilon
        k, reachable = 0, True
        for a, step in zip(event.thresholds, h):
            if a is None or a <= 0:
                continue
            if step <= 0:
                reachable = False
                break
            k = max(k, math.ceil(round(a / (epsilon * step), 9)))
        estimate = poisson_tail_exact(mean, k) if reachable else 0.0
        return MCReport(epsilon=epsilon, event=event.describe(), replications=0, estimate=estimate,
                        standard_error=0.0, relative_error=0.0, method='exact', seed=0, wall_time=0.0)

    def optimal_tilt(self, model: ShotNoiseModel, event: RareEvent, cells: int = 16) -> Control:
        """
        Tilt from the rate optimizer, steering the fluid endpoint to the nearest
        corner of the threshold set above the uncontrolled endpoint
        """
        if event.transform is not None:
            raise InvalidArgumentError("the optimal tilt needs plain coordinate thresholds")
        self._check_event(model, event)
        mean = FluidService(self.settings).solve_controlled_ode(model).terminal
        target = np.array([m if a is None else max(a, m) for a, m in zip(event.thresholds, mean)])
        rates = RateService(self.settings)
        result = rates.minimize_rate(model, TerminalConstraint(target), cells=cells)
        logger.info("Optimal tilt computed", target=target.tolist(), cost=result.cost)
        return rates.export_tilt(result)

    def ldp_decay_table(self, model: ShotNoiseModel, event: RareEvent, epsilons: Sequence[float],
                        method: str = 'naive', replications: int = 0, seed: int = 0,
                        tilt: Optional[Control] = None, threads: Optional[int] = None,
                        cells: int = 16) -> DecayTable:
        """
        Table of (eps, p_hat, se, -eps log p_hat) with the intercept of a
        least-squares line in eps; zero-hit rows are flagged and left out of the fit
        """
        if method not in METHODS:
            raise InvalidArgumentError(f"method must be one of {METHODS}, got {method!r}")
        eps = [require_positive(e, 'epsilon') for e in epsilons]
        if not eps or any(b >= a for a, b in zip(eps, eps[1:])):
            raise InvalidArgumentError("epsilons must be a non-empty strictly decreasing list")
        if method == 'is' and tilt is None:
            tilt = self.optimal_tilt(model, event, cells)

        reports: List[MCReport] = []
        for e in eps:
            if method == 'exact':
                reports.append(self.estimate_exact(model, e, event))
            elif method == 'is':
                reports.append(self.estimate_is(model, e, event, tilt, replications, seed, threads))
            else:
                reports.append(self.estimate_naive(model, e, event, replications, seed, threads))

        rows = []
        for report in reports:
            flagged = report.estimate <= 0
            decay = math.nan if flagged else float(-report.epsilon * math.log(report.estimate)) + 0.0
            if flagged:
                logger.warning("Zero estimate excluded from extrapolation", epsilon=report.epsilon)
            rows.append({'epsilon': report.epsilon, 'p_hat': report.estimate, 'se': report.standard_error,
                         'neg_eps_log_p': decay, 'flagged': flagged})

        usable = [(row['epsilon'], row['neg_eps_log_p']) for row in rows if not row['flagged']]
        if len(usable) >= 2:
            x, y = np.array(usable).T
            slope, intercept = (float(v) for v in np.polyfit(x, y, 1))
        elif usable:
            slope, intercept = 0.0, usable[0][1]
        else:
            slope, intercept = math.nan, math.nan

        logger.info("Decay table completed", method=method, rows=len(rows), intercept=intercept)
        return DecayTable(rows=rows, intercept=intercept, slope=slope, method=method, event=event.describe())
