"""
Tests for oracles app.
"""
import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, tag
from scipy import stats

from diffengine import Tape
from envsim.models import InitialState, ProblemInstance
from envsim.simulator import build_state, initialize
from scenarios.generators import DemandModel, generate
from trainer.config import Horizon

from .basestock import (
    BaseStockPolicy,
    CBSPolicy,
    EchelonPolicy,
    cbs_plugged,
    cbs_search,
    echelon_search,
    newsvendor_level,
    simulate,
)
from .cache import OracleCache
from .dp import DPPolicy, TruncationError, dp_lost_demand, truncation_bound
from .transshipment import relaxed_cost, transshipment_bound


def poisson_scenarios(instance, count, periods, seed, mean=5.0, mode='uniform'):
    traces = generate(DemandModel('poisson', mean=mean), periods, instance.store_count, count, seed)
    initial = initialize(instance, mode, mean, np.random.default_rng(seed), count)
    return traces.to_batch(initial)


def single_store(mode, underage, lead_time):
    return ProblemInstance('single_store', mode, [underage], [1.0], [lead_time])


def covariance(means, cvs, rho):
    sigmas = np.asarray(means) * np.asarray(cvs)
    correlation = np.full((len(means), len(means)), rho)
    np.fill_diagonal(correlation, 1.0)
    return correlation * np.outer(sigmas, sigmas)


class NewsvendorLevelTest(SimpleTestCase):
    """Test cases for analytic base-stock levels."""

    def test_deterministic_demand(self):
        self.assertEqual(newsvendor_level(5.0, 4.0, 1.0, 2), 15.0)
        self.assertEqual(newsvendor_level(5.0, 1.0, 9.0, 0), 5.0)

    def test_equal_costs_give_the_median(self):
        level = newsvendor_level(DemandModel('poisson', mean=5.0), 1.0, 1.0, 1)
        self.assertEqual(level, stats.poisson.median(10.0))

    def test_truncated_normal_cost(self):
        model = DemandModel('trunc_normal', mean=5.0, std=1.6)
        level = newsvendor_level(model, 4.0, 1.0, 1, samples=1_000_000, seed=3)
        self.assertAlmostEqual(level, 10.0 + stats.norm.ppf(0.8) * 1.6 * math.sqrt(2), delta=0.03)
        rng = np.random.default_rng(99)
        demand = np.maximum(rng.normal(5.0, 1.6, size=(1_000_000, 2)), 0.0).sum(axis=1)
        cost = np.mean(4.0 * np.maximum(demand - level, 0.0) + np.maximum(level - demand, 0.0))
        self.assertAlmostEqual(cost, 3.17, delta=0.02)

    def test_monotone_in_costs_and_lead_time(self):
        model = DemandModel('trunc_normal', mean=5.0, std=2.0)
        by_cost = [newsvendor_level(model, p, 1.0, 2, samples=50_000) for p in (1.0, 4.0, 9.0, 19.0)]
        by_lead = [newsvendor_level(model, 4.0, 1.0, lead, samples=50_000) for lead in range(5)]
        self.assertEqual(by_cost, sorted(by_cost))
        self.assertEqual(by_lead, sorted(by_lead))

    def test_store_marginal(self):
        model = DemandModel('corr_normal', mean=(5.0, 10.0), cv=(0.2, 0.2), rho=0.5)
        self.assertAlmostEqual(newsvendor_level(model, 1.0, 1.0, 0, store=1, samples=200_000), 10.0, delta=0.05)

    def test_rejects_zero_costs(self):
        with self.assertRaises(ValueError):
            newsvendor_level(5.0, 0.0, 0.0, 1)


class BaseStockPolicyTest(SimpleTestCase):
    """Test cases for base-stock and capped base-stock policies."""

    def setUp(self):
        self.tape = Tape(record=False)
        self.state = build_state(self.tape, InitialState(
            on_hand=np.array([[2.0], [12.0]]), pipeline=np.array([[[1.0]], [[0.0]]]),
        ))

    def test_orders_up_to_level(self):
        action = BaseStockPolicy(10.0).act(self.tape, {}, self.state, None)
        np.testing.assert_array_equal(action.orders.value, [[7.0], [0.0]])

    def test_cap_limits_orders(self):
        action = CBSPolicy(10.0, 3.0).act(self.tape, {}, self.state, None)
        np.testing.assert_array_equal(action.orders.value, [[3.0], [0.0]])

    def test_backlogged_cost_matches_analytic_expectation(self):
        instance = single_store('backlogged', 4.0, 2)
        scenarios = poisson_scenarios(instance, 512, 150, seed=4)
        level = newsvendor_level(DemandModel('poisson', mean=5.0), 4.0, 1.0, 2)
        summary = simulate(BaseStockPolicy(level), scenarios, instance, Horizon(150, 50))
        support = np.arange(80)
        pmf = stats.poisson.pmf(support, 15.0)
        expected = np.sum(pmf * (4.0 * np.maximum(support - level, 0) + np.maximum(level - support, 0)))
        self.assertLess(abs(summary.mean - expected), 4 * summary.stderr + 0.01)

    def test_infinite_cap_recovers_base_stock(self):
        instance = single_store('lost', 4.0, 2)
        scenarios = poisson_scenarios(instance, 64, 60, seed=5)
        horizon = Horizon(60, 20)
        plain = simulate(BaseStockPolicy(14.0), scenarios, instance, horizon)
        capped = cbs_plugged(instance, scenarios, horizon, 14.0, math.inf)
        self.assertEqual(plain.mean, capped.cost)
        self.assertEqual(capped.source, 'plugged')


class CBSSearchTest(SimpleTestCase):
    """Test cases for the capped base-stock search."""

    def setUp(self):
        self.instance = single_store('lost', 4.0, 1)
        self.scenarios = poisson_scenarios(self.instance, 128, 60, seed=6)
        self.horizon = Horizon(60, 20)

    def test_search_beats_every_plain_base_stock_level(self):
        result = cbs_search(self.instance, self.scenarios, self.horizon)
        plain = [
            cbs_plugged(self.instance, self.scenarios, self.horizon, level, math.inf).cost
            for level in range(0, 21)
        ]
        self.assertLessEqual(result.cost, min(plain) + 1e-12)

    def test_search_is_deterministic(self):
        first = cbs_search(self.instance, self.scenarios, self.horizon, levels=range(5, 16), caps=range(3, 10))
        second = cbs_search(self.instance, self.scenarios, self.horizon, levels=range(5, 16), caps=range(3, 10),
                            parallelism=3)
        self.assertEqual(first.to_dict(), second.to_dict())

    def test_rejects_backlogged_instances(self):
        with self.assertRaises(ValueError):
            cbs_search(single_store('backlogged', 4.0, 1), self.scenarios, self.horizon)

    @tag('slow')
    def test_gap_against_dp(self):
        instance = single_store('lost', 9.0, 3)
        scenarios = poisson_scenarios(instance, 2048, 500, seed=7)
        result = cbs_search(instance, scenarios, Horizon(500, 300))
        optimum = dp_lost_demand(5.0, 9.0, 1.0, 3).average_cost
        gap = 100.0 * (result.cost - optimum) / optimum
        self.assertGreaterEqual(gap, 0.5)
        self.assertLessEqual(gap, 3.0)


class DPLostDemandTest(SimpleTestCase):
    """Test cases for the lost-demand dynamic program."""

    def test_lead_time_one_optimum(self):
        result = dp_lost_demand(5.0, 4.0, 1.0, 1)
        self.assertTrue(result.converged)
        self.assertAlmostEqual(result.average_cost, 4.04, delta=0.005)
        self.assertAlmostEqual(result.stationary_cost, result.average_cost, delta=1e-6)

    def test_zero_demand(self):
        result = dp_lost_demand(0.0, 4.0, 1.0, 2)
        self.assertAlmostEqual(result.average_cost, 0.0, places=12)
        self.assertEqual(int(result.policy[0, 0]), 0)

    def test_truncation_bound_caps_the_inventory_position(self):
        self.assertEqual(truncation_bound(5.0, 1), 23)
        self.assertEqual(truncation_bound(5.0, 4), 45)
        self.assertEqual(truncation_bound(0.0, 2), 2)
        result = dp_lost_demand(5.0, 4.0, 1.0, 1)
        self.assertEqual(result.truncation, 23)
        self.assertLessEqual(result.boundary_mass, 1e-6)

    def test_tight_lattice_raises(self):
        with self.assertRaises(TruncationError):
            dp_lost_demand(5.0, 4.0, 1.0, 1, truncation=6)

    def test_lead_time_range(self):
        with self.assertRaises(ValueError):
            dp_lost_demand(5.0, 4.0, 1.0, 5)

    def test_greedy_policy_in_simulator(self):
        result = dp_lost_demand(5.0, 4.0, 1.0, 2)
        instance = single_store('lost', 4.0, 2)
        scenarios = poisson_scenarios(instance, 256, 400, seed=8, mode='zero')
        summary = simulate(DPPolicy(result), scenarios, instance, Horizon(400, 100))
        self.assertLess(abs(summary.mean - result.average_cost), 4 * summary.stderr + 0.01)

    @tag('slow')
    def test_lead_time_four_optimum(self):
        result = dp_lost_demand(5.0, 39.0, 1.0, 4, spread=5.0)
        self.assertAlmostEqual(result.average_cost, 10.79, delta=0.01)


class EchelonTest(SimpleTestCase):
    """Test cases for echelon-stock policies and their search."""

    def test_transfers_limited_by_upstream_stock(self):
        tape = Tape(record=False)
        policy = EchelonPolicy([10.0, 6.0])
        state = build_state(tape, InitialState(on_hand=np.array([[2.0, 0.0]]), pipeline=np.zeros((1, 2, 0))))
        action = policy.act(tape, policy.params.bind(tape), state, None)
        np.testing.assert_array_equal(action.orders.value, [[8.0, 2.0]])

    def test_single_echelon_matches_newsvendor(self):
        instance = ProblemInstance('serial', 'backlogged', [4.0], [1.0], [2])
        train = poisson_scenarios(instance, 128, 40, seed=9)
        dev = poisson_scenarios(instance, 128, 40, seed=10)
        horizon = Horizon(40, 10)
        result = echelon_search(instance, train, dev, horizon, starts=1, max_steps=150)
        level = newsvendor_level(DemandModel('poisson', mean=5.0), 4.0, 1.0, 2)
        reference = simulate(EchelonPolicy([level]), dev, instance, horizon)
        self.assertLess(abs(result.levels[0] - level), 1.5)
        self.assertLessEqual(result.cost, reference.mean * 1.01)

    def test_needs_serial_instance(self):
        instance = single_store('backlogged', 4.0, 1)
        scenarios = poisson_scenarios(instance, 4, 10, seed=0)
        with self.assertRaises(ValueError):
            echelon_search(instance, scenarios, scenarios, Horizon(10, 0))


class TransshipmentBoundTest(SimpleTestCase):
    """Test cases for the transshipment lower bound."""

    def setUp(self):
        self.means = [3.0, 5.0, 7.0]
        self.cov = covariance(self.means, [0.2, 0.25, 0.3], 0.5)

    def test_equal_costs(self):
        bound = transshipment_bound(3, 2.0, 2.0, 3, 2, self.means, self.cov)
        self.assertAlmostEqual(bound.echelon_level, bound.mean_g)
        self.assertAlmostEqual(bound.lower_bound, 4.0 * bound.std_g * stats.norm.pdf(0.0) / 3)

    def test_magnitude(self):
        means = [5.0] * 3
        bound = transshipment_bound(3, 4.0, 1.0, 3, 2, means, covariance(means, [0.24] * 3, 0.0))
        self.assertAlmostEqual(bound.std_g, 7.2)
        self.assertAlmostEqual(bound.lower_bound, 3.36, delta=0.01)

    def test_relaxed_simulation_reproduces_bound(self):
        bound = transshipment_bound(3, 4.0, 1.0, 3, 2, self.means, self.cov)
        estimate = relaxed_cost(bound, 4.0, 1.0, 3, 2, self.means, self.cov, np.random.default_rng(11))
        self.assertLess(abs(estimate.mean - bound.lower_bound), 3 * estimate.stderr)

    def test_rejects_invalid_covariance(self):
        bad = covariance(self.means, [0.2] * 3, -0.9)
        with self.assertRaises(ValueError):
            transshipment_bound(3, 4.0, 1.0, 3, 2, self.means, bad)


class OracleCacheTest(SimpleTestCase):
    """Test cases for the oracle result cache."""

    def test_fetch_computes_once_and_persists(self):
        calls = []

        def compute():
            calls.append(1)
            return {'average_cost': np.float64(4.04), 'cap': math.inf}

        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'oracles.json'
            cache = OracleCache(path)
            first = cache.fetch('dp', {'rate': 5.0, 'lead_time': 1}, compute)
            second = OracleCache(path).fetch('dp', {'lead_time': 1, 'rate': 5.0}, compute)
        self.assertEqual(len(calls), 1)
        self.assertEqual(first, second)
        self.assertEqual(second['cap'], 'inf')

    def test_unreadable_file_is_ignored(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'oracles.json'
            path.write_text('{not json')
            with self.assertLogs('oracles.cache', level='WARNING'):
                cache = OracleCache(path)
        self.assertEqual(len(cache), 0)
