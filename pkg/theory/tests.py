"""
Tests for theory app.
"""
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.test import SimpleTestCase, tag
from scipy import integrate
from scipy.optimize import minimize_scalar

from .experiment import fit_exponent, gap_scaling_experiment, homogeneous_family
from .policy import compare_regimes, draw_example, misclassification_bound, run_pi_tilde
from .relaxation import (
    AssumptionError,
    MixtureDemand,
    RelaxedProblem,
    TheoryPrimitives,
    backward_recursion,
    base_levels,
    echelon_bounds,
    echelon_objective,
    eval_fully_relaxed,
    solve_Rhat,
    solve_S_hat,
)


def mixed_stores(periods=50):
    return TheoryPrimitives(
        gamma_high=1.5, gamma_low=1.0, q=0.5,
        lower=(10.0, 8.0, 12.0), upper=(12.0, 9.0, 14.0),
        underage=(4.0, 6.0, 5.0), holding=(1.0, 1.5, 1.0),
        warehouse_holding=0.5, periods=periods,
    )


def deterministic_units(stores=3):
    return TheoryPrimitives.homogeneous(stores, 1.5, 1.0, 0.5, 10.0, 10.0, 4.0, 1.0, 0.5)


class TheoryPrimitivesTest(SimpleTestCase):
    """Test cases for the primitives and their assumptions"""

    def test_derived_demand_levels(self):
        prims = mixed_stores()
        self.assertEqual(prims.stores, 3)
        self.assertAlmostEqual(prims.mean_total, 11.0 + 8.5 + 13.0)
        self.assertAlmostEqual(prims.demand_high, 1.5 * 32.5)
        self.assertAlmostEqual(prims.demand_low, 32.5)

    def test_spread_assumption_is_enforced(self):
        with self.assertRaises(AssumptionError):
            TheoryPrimitives.homogeneous(2, 2.0, 1.0, 0.5, 10.0, 12.0, 4.0, 1.0, 0.5)

    def test_underage_assumption_is_enforced(self):
        with self.assertRaises(AssumptionError):
            TheoryPrimitives.homogeneous(2, 1.5, 1.0, 0.1, 10.0, 12.0, 1.0, 1.0, 0.5)

    def test_assumption_error_is_a_value_error(self):
        with self.assertRaises(ValueError):
            TheoryPrimitives.homogeneous(2, 1.5, 1.0, 0.5, 10.0, 12.0, 4.0, 0.2, 0.5)

    def test_demand_model_matches(self):
        model = mixed_stores().demand_model()
        self.assertEqual(model.kind, 'high_low')
        self.assertEqual(model.lower, (10.0, 8.0, 12.0))


class MixtureDemandTest(SimpleTestCase):
    """Test cases for the per-store mixture distribution"""

    def setUp(self):
        self.demand = MixtureDemand(mixed_stores())

    def test_inverse_on_both_components(self):
        self.assertAlmostEqual(self.demand.ppf(0.25)[0], 11.0)
        self.assertAlmostEqual(self.demand.ppf(0.75)[0], 16.5)

    def test_inverse_at_the_gap_takes_the_smallest_level(self):
        self.assertAlmostEqual(self.demand.ppf(0.5)[0], 12.0)
        self.assertAlmostEqual(self.demand.cdf(np.full(3, 13.5))[0], 0.5)

    def test_inverse_clips_to_the_support(self):
        np.testing.assert_allclose(self.demand.ppf(-0.1), [10.0, 8.0, 12.0])
        np.testing.assert_allclose(self.demand.ppf(1.2), [18.0, 13.5, 21.0])

    def test_point_masses(self):
        demand = MixtureDemand(deterministic_units())
        self.assertAlmostEqual(demand.ppf(0.3)[0], 10.0)
        self.assertAlmostEqual(demand.ppf(0.7)[0], 15.0)
        self.assertAlmostEqual(demand.cdf(np.full(3, 10.0))[0], 0.5)
        self.assertAlmostEqual(demand.cdf(np.full(3, 10.0), left=True)[0], 0.0)

    def test_expected_excess_integrates_the_cdf(self):
        for level in (9.0, 11.0, 13.0, 16.0, 20.0):
            exact, _ = integrate.quad(
                lambda x: self.demand.cdf(np.full(3, x))[0], 10.0, max(level, 10.0),
                points=[p for p in (12.0, 15.0) if p < level] or None,
            )
            y = np.array([level, 8.5, 13.0])
            self.assertAlmostEqual(self.demand.expected_excess(y)[0], exact, places=8)


class RelaxedProblemTest(SimpleTestCase):
    """Test cases for the relaxed per-period problem"""

    def setUp(self):
        self.prims = mixed_stores()
        self.problem = RelaxedProblem(self.prims)

    def test_loose_budget_has_zero_multiplier(self):
        solution = self.problem.solve(1000.0)
        self.assertEqual(solution.multiplier, 0.0)
        np.testing.assert_allclose(solution.allocation, self.problem.levels(0.0))

    def test_single_store_matches_direct_search(self):
        prims = TheoryPrimitives(1.5, 1.0, 0.5, (10.0,), (12.0,), (4.0,), (1.0,), 0.5)
        problem = RelaxedProblem(prims)
        for budget in (11.0, 14.0, 16.5, 30.0):
            oracle = minimize_scalar(
                lambda y: float(problem.value(budget, np.array([y]))),
                bounds=(10.0, min(budget, 18.0)), method='bounded', options={'xatol': 1e-10},
            )
            value = solve_Rhat(budget, prims).value
            self.assertLessEqual(value, oracle.fun + 1e-9)
            self.assertAlmostEqual(value, oracle.fun, delta=1e-5)

    def test_convex_in_the_budget(self):
        rng = np.random.default_rng(3)
        for _ in range(40):
            a, b = rng.uniform(self.problem.smallest_total, 55.0, size=2)
            midpoint = self.problem((a + b) / 2)
            self.assertLessEqual(midpoint, (self.problem(a) + self.problem(b)) / 2 + 1e-9)

    def test_kkt_conditions_and_monotone_allocations(self):
        budgets = np.linspace(31.0, 52.0, 43)
        allocations = []
        for budget in budgets:
            solution = self.problem.solve(budget)
            residuals = self.problem.kkt_residuals(budget, solution)
            self.assertLess(residuals['stationarity'].max(), 1e-8)
            self.assertLess(float(residuals['slackness']), 1e-8)
            self.assertLessEqual(solution.allocation.sum(), budget + 1e-9)
            allocations.append(solution.allocation)
        self.assertTrue(np.all(np.diff(np.array(allocations), axis=0) >= -1e-9))

    def test_budget_below_every_allocation_is_rejected(self):
        with self.assertRaises(ValueError):
            self.problem.solve(self.problem.smallest_total - 1.0)


class EchelonLevelTest(SimpleTestCase):
    """Test cases for the echelon level and the store base levels"""

    def test_beats_a_grid(self):
        prims = mixed_stores()
        problem = RelaxedProblem(prims)
        echelon = solve_S_hat(prims, problem)
        objective = echelon_objective(problem)
        low, high = echelon_bounds(prims, problem)
        grid = min(objective(level) for level in np.linspace(low, high, 1000))
        self.assertLessEqual(objective(echelon), grid + 1e-9)

    def test_equal_regimes_reduce_to_newsvendor_levels(self):
        prims = TheoryPrimitives.homogeneous(3, 1.0, 1.0, 0.5, 10.0, 12.0, 4.0, 1.0, 0.5)
        echelon = solve_S_hat(prims)
        self.assertAlmostEqual(echelon - prims.demand_low, 3 * (10.0 + 0.8 * 2.0), places=4)

    def test_base_levels_are_ordered(self):
        prims = mixed_stores()
        levels = base_levels(prims)
        upper = prims.gamma_high * np.asarray(prims.upper)
        lower = prims.gamma_low * np.asarray(prims.lower)
        self.assertTrue(np.all(upper >= levels.after_low - 1e-9))
        self.assertTrue(np.all(levels.after_low >= levels.after_high - 1e-9))
        self.assertTrue(np.all(levels.after_high >= lower - 1e-9))
        self.assertIn('primitives', levels.to_dict())


class FullyRelaxedTest(SimpleTestCase):
    """Test cases for the fully relaxed multi-period cost."""

    def setUp(self):
        self.prims = TheoryPrimitives(1.5, 1.0, 0.5, (10.0, 8.0), (12.0, 9.0), (4.0, 6.0), (1.0, 1.5), 0.5)
        self.problem = RelaxedProblem(self.prims)
        self.start = solve_S_hat(self.prims, self.problem) - self.prims.demand_high

    def test_single_period(self):
        self.assertAlmostEqual(eval_fully_relaxed(self.prims, self.start, 1, self.problem), self.problem(self.start))

    def test_matches_backward_recursion(self):
        closed = eval_fully_relaxed(self.prims, self.start, 50, self.problem)
        recursion = backward_recursion(self.prims, self.start, 50, self.problem)
        self.assertAlmostEqual(closed, recursion, delta=1e-9 * abs(closed))


class PolicyTest(SimpleTestCase):
    """Test cases for the symmetry-aware policy in the original system"""

    def test_deterministic_units_reach_the_bound(self):
        prims = deterministic_units()
        run = run_pi_tilde(prims, draw_example(prims, 20, 30, seed=1))
        self.assertAlmostEqual(run.ratio, 1.0, delta=1e-9)
        self.assertEqual(run.misclassification, 0.0)
        self.assertEqual(run.scarcity, 0.0)
        self.assertGreater(run.relaxed_cost, 0.0)

    def test_no_policy_beats_the_relaxed_cost(self):
        prims = mixed_stores()
        for run in compare_regimes(prims, draw_example(prims, 100, 40, seed=2)):
            self.assertGreaterEqual(run.ratio, 1.0 - 3 * run.ratio_stderr)

    def test_misclassification_falls_with_store_count(self):
        family = homogeneous_family(gamma_high=1.05, lower=10.0, upper=19.0)
        rates = []
        for stores in (4, 64):
            prims = family(stores)
            run = run_pi_tilde(prims, draw_example(prims, 100, 40, seed=3))
            self.assertLessEqual(run.misclassification, misclassification_bound(prims))
            rates.append(run.misclassification)
        self.assertGreater(rates[0], 0.0)
        self.assertLess(rates[1], rates[0])

    def test_sharding_does_not_change_results(self):
        prims = mixed_stores()
        draws = draw_example(prims, 50, 20, seed=4)
        serial = run_pi_tilde(prims, draws, parallelism=1)
        sharded = run_pi_tilde(prims, draws, parallelism=3, shard_size=16)
        self.assertAlmostEqual(serial.gap, sharded.gap, places=10)
        self.assertAlmostEqual(serial.cost, sharded.cost, places=10)

    def test_rejects_bad_arguments(self):
        prims = mixed_stores()
        draws = draw_example(prims, 5, 5, seed=5)
        with self.assertRaises(ValueError):
            run_pi_tilde(prims, draws, regime='mixed')
        with self.assertRaises(ValueError):
            run_pi_tilde(deterministic_units(2), draws)
        with self.assertRaises(ValueError):
            run_pi_tilde(prims, draws, burn_in=5)


class GapScalingTest(SimpleTestCase):
    """Test cases for the store-count scaling experiment"""

    def test_ratio_shrinks_with_store_count(self):
        table = gap_scaling_experiment(homogeneous_family(), [4, 16, 64, 256], scenarios=100, periods=40, seed=6)
        ratios = table.frame['ratio'].to_numpy()
        self.assertTrue(np.all(np.diff(ratios) < 0))
        self.assertEqual(table.flagged, [])
        with tempfile.TemporaryDirectory() as tmp:
            paths = table.write(Path(tmp))
            written = pd.read_csv(paths['table'])
            self.assertIn('fitted_exponent', written.columns)
            self.assertEqual(written['stores'].tolist(), [4, 16, 64, 256])
            self.assertTrue(paths['base_levels'].exists())

    def test_needs_enough_store_counts(self):
        with self.assertRaises(ValueError):
            gap_scaling_experiment(homogeneous_family(), [4, 16])

    def test_exponent_of_an_exact_power_law(self):
        stores = [4, 16, 64, 256]
        exponent, intercept = fit_exponent(stores, [1 + 2.0 / np.sqrt(k) for k in stores])
        self.assertAlmostEqual(exponent, -0.5)
        self.assertAlmostEqual(intercept, np.log(2.0))

    @tag('slow')
    def test_fitted_exponent(self):
        table = gap_scaling_experiment(homogeneous_family(), [4, 16, 64, 256], scenarios=1000, periods=100, seed=7)
        self.assertTrue(-0.8 <= table.exponent <= -0.3)
        self.assertTrue(np.all(table.frame['ratio'] >= 1.0 - 3 * table.frame['ratio_stderr']))
