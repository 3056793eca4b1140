import math

import numpy as np
import pytest
from scipy.stats import poisson

from shotnoise.errors import InvalidArgumentError
from shotnoise.models import Control, RareEvent
from shotnoise.services.monte_carlo_service import clopper_pearson_upper, poisson_tail_exact

RATE_AT_TWO = 2.0 * math.log(2.0) - 1.0


class TestPoissonTail:
    @pytest.mark.parametrize('mean, k', [(10.0, 5), (10.0, 10), (10.0, 20), (40.0, 80), (400.0, 800), (1e-3, 1)])
    def test_matches_survival_function(self, mean, k):
        assert poisson_tail_exact(mean, k) == pytest.approx(poisson.sf(k - 1, mean), rel=1e-9)

    @pytest.mark.parametrize('mean, k', [(10.0, 20), (3.0, 9)])
    def test_matches_direct_series(self, mean, k):
        terms = (math.exp(j * math.log(mean) - mean - math.lgamma(j + 1)) for j in range(k, k + 1000))
        assert poisson_tail_exact(mean, k) == pytest.approx(math.fsum(terms), rel=1e-12)

    def test_zero_threshold(self):
        assert poisson_tail_exact(5.0, 0) == 1.0

    def test_decreasing_in_k(self):
        tails = [poisson_tail_exact(20.0, k) for k in range(0, 80, 5)]
        assert all(b < a for a, b in zip(tails, tails[1:]))

    def test_increasing_in_mean(self):
        tails = [poisson_tail_exact(mean, 20) for mean in (1.0, 5.0, 10.0, 20.0, 40.0)]
        assert all(b > a for a, b in zip(tails, tails[1:]))

    @pytest.mark.parametrize('mean, k', [(0.0, 1), (-1.0, 1), (5.0, -1), (5.0, 1.5), (5.0, True)])
    def test_rejects_invalid_arguments(self, mean, k):
        with pytest.raises(InvalidArgumentError):
            poisson_tail_exact(mean, k)


def test_clopper_pearson_upper():
    assert clopper_pearson_upper(0, 100) == pytest.approx(1.0 - 0.05 ** (1 / 100))
    assert clopper_pearson_upper(10, 10) == 1.0
    assert clopper_pearson_upper(5, 100) > 0.05


class TestNaiveEstimate:
    def test_whole_space(self, monte_carlo_service, unit_model):
        report = monte_carlo_service.estimate_naive(unit_model, 0.1, RareEvent((None,)), 100, seed=1)
        assert report.estimate == 1.0
        assert report.standard_error == 0.0
        assert report.hits == 100

    def test_thread_count_does_not_change_result(self, monte_carlo_service, unit_model):
        event = RareEvent((1.5,))
        single = monte_carlo_service.estimate_naive(unit_model, 0.1, event, 500, seed=21, threads=1)
        pooled = monte_carlo_service.estimate_naive(unit_model, 0.1, event, 500, seed=21, threads=4)
        assert single.to_row() == pooled.to_row()
        assert pooled.workers == 4

    def test_agrees_with_exact_tail(self, monte_carlo_service, unit_model):
        event = RareEvent((2.0,))
        report = monte_carlo_service.estimate_naive(unit_model, 0.1, event, 10_000, seed=3)
        exact = poisson_tail_exact(10.0, 20)
        assert abs(report.estimate - exact) <= 4.0 * math.sqrt(exact * (1.0 - exact) / 10_000)
        assert report.upper_bound >= report.estimate

    def test_zero_hits(self, monte_carlo_service, unit_model):
        report = monte_carlo_service.estimate_naive(unit_model, 1 / 40, RareEvent((2.0,)), 2000, seed=4)
        assert report.hits == 0
        assert report.estimate == 0.0
        assert report.relative_error == math.inf
        assert 0.0 < report.upper_bound < 2e-3

    def test_minimum_replications(self, monte_carlo_service, unit_model):
        with pytest.raises(InvalidArgumentError):
            monte_carlo_service.estimate_naive(unit_model, 0.1, RareEvent((2.0,)), 99)

    def test_threshold_count_must_match(self, monte_carlo_service, unit_model):
        with pytest.raises(InvalidArgumentError):
            monte_carlo_service.estimate_naive(unit_model, 0.1, RareEvent((2.0, 1.0)), 100)


class TestImportanceSampling:
    def test_unit_tilt_reproduces_naive(self, monte_carlo_service, unit_model):
        event = RareEvent((1.5,))
        naive = monte_carlo_service.estimate_naive(unit_model, 0.1, event, 400, seed=9)
        tilted = monte_carlo_service.estimate_is(unit_model, 0.1, event, Control.unit(1.0, 1), 400, seed=9)
        assert tilted.estimate == naive.estimate
        assert tilted.hits == naive.hits

    def test_tilted_estimate_is_unbiased(self, monte_carlo_service, unit_model):
        tilt = Control.constant(2.0, 1.0, 1, tag='tilt')
        report = monte_carlo_service.estimate_is(unit_model, 1 / 40, RareEvent((2.0,)), tilt, 5000, seed=5)
        exact = poisson_tail_exact(40.0, 80)
        assert abs(report.estimate - exact) <= 4.0 * report.standard_error
        assert report.relative_error < 0.1
        assert report.method == 'is'

    @pytest.mark.parametrize('epsilon', [1 / 10, 1 / 20, 1 / 40])
    def test_batch_means_match_exact_tail(self, monte_carlo_service, unit_model, epsilon):
        tilt = Control.constant(2.0, 1.0, 1, tag='tilt')
        event = RareEvent((2.0,))
        batches = np.array([
            monte_carlo_service.estimate_is(unit_model, epsilon, event, tilt, 500, seed=1000 + b).estimate
            for b in range(20)
        ])
        exact = poisson_tail_exact(1.0 / epsilon, round(2.0 / epsilon))
        batch_se = batches.std(ddof=1) / math.sqrt(batches.size)
        assert abs(batches.mean() - exact) <= 3.0 * batch_se

    def test_rejects_degenerate_tilts(self, monte_carlo_service, unit_model, two_atom_model):
        event = RareEvent((2.0,))
        with pytest.raises(InvalidArgumentError):
            monte_carlo_service.estimate_is(unit_model, 0.1, event, Control([0.0, 0.5, 1.0], [[0.0], [2.0]]), 100)
        with pytest.raises(InvalidArgumentError):
            monte_carlo_service.estimate_is(two_atom_model, 0.1, event, Control.unit(1.0, 1), 100)


class TestExactEstimate:
    def test_unit_poisson(self, monte_carlo_service, unit_model):
        report = monte_carlo_service.estimate_exact(unit_model, 0.1, RareEvent((2.0,)))
        assert report.estimate == poisson_tail_exact(10.0, 20)
        assert report.method == 'exact'

    def test_needs_single_atom(self, monte_carlo_service, two_atom_model, growth_model):
        with pytest.raises(InvalidArgumentError):
            monte_carlo_service.estimate_exact(two_atom_model, 0.1, RareEvent((2.0,)))
        with pytest.raises(InvalidArgumentError):
            monte_carlo_service.estimate_exact(growth_model, 0.1, RareEvent((2.0,)))


class TestDecayTable:
    def test_exact_intercept(self, monte_carlo_service, unit_model):
        table = monte_carlo_service.ldp_decay_table(unit_model, RareEvent((2.0,)), [1 / 10, 1 / 20, 1 / 40], 'exact')
        assert abs(table.intercept - RATE_AT_TWO) / RATE_AT_TWO <= 0.15
        assert table.flagged == []
        decays = [row['neg_eps_log_p'] for row in table.rows]
        assert all(b < a for a, b in zip(decays, decays[1:]))

    def test_whole_space_rows(self, monte_carlo_service, unit_model):
        table = monte_carlo_service.ldp_decay_table(unit_model, RareEvent((None,)), [0.5, 0.1], 'exact')
        assert [row['neg_eps_log_p'] for row in table.rows] == [0.0, 0.0]
        assert table.intercept == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize('epsilons', [[], [0.1, 0.1], [0.05, 0.1], [0.1, -0.05]])
    def test_rejects_bad_epsilons(self, monte_carlo_service, unit_model, epsilons):
        with pytest.raises(InvalidArgumentError):
            monte_carlo_service.ldp_decay_table(unit_model, RareEvent((2.0,)), epsilons, 'exact')

    def test_rejects_unknown_method(self, monte_carlo_service, unit_model):
        with pytest.raises(InvalidArgumentError):
            monte_carlo_service.ldp_decay_table(unit_model, RareEvent((2.0,)), [0.1], 'magic')

    def test_importance_sampling_table(self, monte_carlo_service, unit_model):
        tilt = Control.constant(2.0, 1.0, 1, tag='tilt')
        table = monte_carlo_service.ldp_decay_table(unit_model, RareEvent((2.0,)), [1 / 10, 1 / 20, 1 / 40], 'is',
                                                    replications=4000, seed=7, tilt=tilt)
        assert abs(table.intercept - RATE_AT_TWO) / RATE_AT_TWO <= 0.15
        assert len(table.to_records()) == 3
        exact = monte_carlo_service.ldp_decay_table(unit_model, RareEvent((2.0,)), [1 / 10, 1 / 20, 1 / 40], 'exact')
        for row, reference in zip(table.rows, exact.rows):
            assert abs(row['p_hat'] - reference['p_hat']) <= 3.0 * row['se']

    def test_zero_rows_are_flagged(self, monte_carlo_service, unit_model):
        table = monte_carlo_service.ldp_decay_table(unit_model, RareEvent((3.0,)), [1.0, 0.025], 'naive',
                                                    replications=200, seed=2)
        assert table.flagged == [0.025]
        assert math.isnan(table.rows[1]['neg_eps_log_p'])
        assert table.intercept == table.rows[0]['neg_eps_log_p']
        assert table.slope == 0.0


def test_optimal_tilt(monte_carlo_service, unit_model):
    tilt = monte_carlo_service.optimal_tilt(unit_model, RareEvent((2.0,)), cells=4)
    assert tilt.tag == 'optimal'
    np.testing.assert_allclose(tilt.values, 2.0, atol=1e-3)


def test_optimal_tilt_for_typical_event(monte_carlo_service, unit_model):
    tilt = monte_carlo_service.optimal_tilt(unit_model, RareEvent((0.5,)), cells=4)
    np.testing.assert_allclose(tilt.values, 1.0, atol=1e-6)
