import math

import numpy as np
import pytest
from scipy.optimize import brentq

from shotnoise.errors import InfeasibleError, InvalidArgumentError, InvalidStateError
from shotnoise.models import Control
from shotnoise.models.catalogue import compound_poisson_model
from shotnoise.services.fluid_service import ell
from shotnoise.services.rate_service import PathConstraint, RateProblem, TerminalConstraint
from shotnoise.services.verification_service import gradient_error

RATE_AT_TWO = 2.0 * math.log(2.0) - 1.0


def two_atom_oracle(a):
    """sup_theta theta a - (e^theta - 1) - 0.5 (e^{3 theta} - 1), via the stationarity equation"""
    theta = brentq(lambda t: math.exp(t) + 1.5 * math.exp(3.0 * t) - a, -20.0, 20.0, xtol=1e-15)
    return theta * a - math.expm1(theta) - 0.5 * math.expm1(3.0 * theta)


class TestLegendreOracle:
    def test_unit_poisson(self, rate_service, unit_model):
        assert rate_service.legendre_oracle(unit_model, [2.0]) == pytest.approx(RATE_AT_TWO, abs=1e-12)

    def test_mean_is_free(self, rate_service, unit_model):
        assert rate_service.legendre_oracle(unit_model, [1.0]) == pytest.approx(0.0, abs=1e-12)

    def test_zero_target_switches_atoms_off(self, rate_service, two_atom_model):
        assert rate_service.legendre_oracle(two_atom_model, [0.0]) == pytest.approx(1.5)

    def test_horizon_scaling(self, rate_service, unit_model):
        assert rate_service.legendre_oracle(unit_model, [4.0], horizon=2.0) == pytest.approx(2.0 * RATE_AT_TWO)

    @pytest.mark.parametrize('a', [0.5, 4.0, 10.0])
    def test_two_atoms(self, rate_service, two_atom_model, a):
        assert rate_service.legendre_oracle(two_atom_model, [a]) == pytest.approx(two_atom_oracle(a), rel=1e-9)

    def test_two_dimensions(self, rate_service):
        model = compound_poisson_model([[1.0, 0.0], [0.0, 1.0]], [1.0, 1.0])
        assert rate_service.legendre_oracle(model, [2.0, 3.0]) == pytest.approx(ell(2.0) + ell(3.0), rel=1e-8)

    def test_unreachable_target(self, rate_service):
        model = compound_poisson_model([[1.0, 0.0]], [1.0])
        with pytest.raises(InfeasibleError) as excinfo:
            rate_service.legendre_oracle(model, [1.0, 1.0])
        assert excinfo.value.exit_code == 4

    def test_needs_state_independent_model(self, rate_service, growth_model):
        with pytest.raises(InvalidArgumentError):
            rate_service.legendre_oracle(growth_model, [2.0])


class TestMinimizeRate:
    def test_unit_poisson_matches_oracle(self, rate_service, unit_model):
        result = rate_service.minimize_rate(unit_model, TerminalConstraint(np.array([2.0])), cells=16)
        assert result.converged
        assert result.cost == pytest.approx(RATE_AT_TWO, abs=1e-3)
        assert result.residual <= 1e-8
        np.testing.assert_allclose(result.control.values, 2.0, atol=1e-3)
        assert result.fluid.terminal[0] == pytest.approx(2.0, abs=1e-8)
        assert result.control.tag == 'optimal'

    def test_mean_endpoint_costs_nothing(self, rate_service, unit_model):
        result = rate_service.minimize_rate(unit_model, TerminalConstraint(np.array([1.0])), cells=4)
        assert result.converged
        assert result.cost == pytest.approx(0.0, abs=1e-12)
        assert len(result.trace) == 1

    def test_two_atoms_match_oracle(self, rate_service, two_atom_model):
        result = rate_service.minimize_rate(two_atom_model, TerminalConstraint(np.array([4.0])), cells=4)
        assert result.cost == pytest.approx(two_atom_oracle(4.0), rel=1e-5)
        # optimal tilt is e^{theta h}: the large atom is tilted more
        assert np.all(result.control.values[:, 1] > result.control.values[:, 0])

    def test_path_constraint(self, rate_service, unit_model):
        constraint = PathConstraint(np.array([0.0, 0.5, 1.0]), np.array([[0.0], [0.5], [2.0]]))
        result = rate_service.minimize_rate(unit_model, constraint, cells=4)
        assert result.converged
        np.testing.assert_allclose(result.control.values[:, 0], [1.0, 1.0, 3.0, 3.0], atol=1e-4)
        assert result.cost == pytest.approx(0.5 * ell(3.0), abs=1e-4)

    def test_state_dependent_refinement(self, rate_service, growth_model):
        target = TerminalConstraint(np.array([2.0]))
        coarse = rate_service.minimize_rate(growth_model, target, cells=4)
        fine = rate_service.minimize_rate(growth_model, target, cells=8)
        assert coarse.converged and fine.converged
        assert 0.0 < fine.cost <= coarse.cost + 1e-6
        assert fine.fluid.terminal[0] == pytest.approx(2.0, abs=1e-7)

    @pytest.mark.parametrize('model_name, target', [('unit_model', 2.0), ('two_atom_model', 4.0)])
    def test_refinement_does_not_raise_cost(self, rate_service, request, model_name, target):
        model = request.getfixturevalue(model_name)
        constraint = TerminalConstraint(np.array([target]))
        coarse = rate_service.minimize_rate(model, constraint, cells=8)
        fine = rate_service.minimize_rate(model, constraint, cells=32)
        assert coarse.converged and fine.converged
        assert fine.cost <= coarse.cost + 1e-4

    def test_unreachable_target_raises(self, rate_service):
        model = compound_poisson_model([[1.0, 0.0]], [1.0])
        with pytest.raises(InfeasibleError) as excinfo:
            rate_service.minimize_rate(model, TerminalConstraint(np.array([1.0, 1.0])), cells=2, max_rounds=5)
        assert excinfo.value.details['rounds'] == 5

    def test_failed_run_can_be_returned(self, rate_service, unit_model):
        target = TerminalConstraint(np.array([2.0]))
        result = rate_service.minimize_rate(unit_model, target, cells=2, max_rounds=1, raise_on_failure=False)
        assert not result.converged
        assert result.residual > 1e-8
        with pytest.raises(InvalidStateError):
            rate_service.export_tilt(result)
        with pytest.raises(InfeasibleError):
            rate_service.minimize_rate(unit_model, target, cells=2, max_rounds=1)

    def test_exported_tilt_round_trips(self, rate_service, unit_model):
        result = rate_service.minimize_rate(unit_model, TerminalConstraint(np.array([2.0])), cells=4)
        tilt = rate_service.export_tilt(result)
        restored = Control.from_json(tilt.to_json())
        assert np.array_equal(restored.values, tilt.values)
        data = result.to_dict()
        assert data['converged'] is True
        assert data['trace'][-1]['residual'] == result.residual


class TestRateProblem:
    def test_forward_is_exact_for_constant_shots(self, settings, two_atom_model):
        problem = RateProblem(two_atom_model, TerminalConstraint(np.array([4.0])), 4, settings)
        u = np.log(np.tile([2.0, 1.0], 4))
        assert problem.forward(u)[-1, 0] == pytest.approx(2.0 + 1.5, abs=1e-12)
        assert problem.cost(u) == pytest.approx(ell(2.0))

    @pytest.mark.parametrize('family', ['linear_growth', 'saturating', 'norm_growth'])
    def test_adjoint_gradient(self, settings, family):
        model = compound_poisson_model([[0.6, 1.1], [1.3, 0.4]], [0.8, 1.2], shot_value=family)
        problem = RateProblem(model, TerminalConstraint(np.array([1.5, 1.8])), 4, settings, forward_tol=1e-13)
        rng = np.random.default_rng(3)
        u = rng.normal(0.0, 0.3, problem.size)
        multipliers = rng.normal(0.0, 1.0, problem.targets.size)
        assert gradient_error(problem, u, multipliers, 10.0) <= 1e-5

    def test_adjoint_gradient_state_independent(self, settings, two_atom_model):
        problem = RateProblem(two_atom_model, PathConstraint(np.array([0.0, 1.0]), np.array([[0.0], [3.0]])), 4,
                              settings)
        rng = np.random.default_rng(5)
        u = rng.normal(0.0, 0.3, problem.size)
        multipliers = rng.normal(0.0, 1.0, problem.targets.size)
        assert problem.targets.shape == (4, 1)
        assert gradient_error(problem, u, multipliers, 10.0) <= 1e-6

    @pytest.mark.parametrize('cells', [0, -1, 2.5, True])
    def test_rejects_bad_cells(self, settings, unit_model, cells):
        with pytest.raises(InvalidArgumentError):
            RateProblem(unit_model, TerminalConstraint(np.array([2.0])), cells, settings)

    def test_rejects_bad_targets(self, settings, unit_model):
        with pytest.raises(InvalidArgumentError):
            RateProblem(unit_model, TerminalConstraint(np.array([2.0, 1.0])), 2, settings)
        with pytest.raises(InvalidArgumentError):
            RateProblem(unit_model, PathConstraint(np.array([0.0, 1.0]), np.array([[0.0], [-1.0]])), 2, settings)
        with pytest.raises(InvalidArgumentError):
            RateProblem(unit_model, PathConstraint(np.array([0.0, 2.0]), np.array([[0.0], [1.0]])), 2, settings)
