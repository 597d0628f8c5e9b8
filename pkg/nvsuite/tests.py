"""
Tests for nvsuite app.
"""
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.test import SimpleTestCase, tag
from scipy import stats

from diffengine import Tape, backward, total
from envsim.models import InitialState, ScenarioBatch
from envsim.simulator import PeriodContext, build_state, rollout
from scenarios.generators import DemandModel, generate, synthetic_sales
from scenarios.ingest import ingest_csv
from trainer.config import Horizon, TrainConfig

from .forecaster import HORIZONS, QUANTILES, QuantileForecaster, make_samples, monotone_rearrange, pinball_loss
from .policies import GNPolicy, critical_ratio, gn_policy_step
from .quantiles import inverse_quantile, inverse_quantiles, quantile_at
from .suite import (
    assign_meta_primitives,
    build_nv_batch,
    evaluate_policy,
    implied_quantile_frame,
    nv_instance,
    run_suite,
    stockout_buckets,
    train_downstream,
)

LINEAR_ROW = 10.0 + 20.0 * np.asarray(QUANTILES)


class LinearForecaster(QuantileForecaster):
    """Every horizon's tau-quantile is 10 + 20 tau, whatever the window."""

    def __init__(self):
        super().__init__(np.random.default_rng(0), hidden=(2,))

    def predict(self, windows, days=None):
        rows = np.asarray(windows).reshape(-1, self.window).shape[0]
        return np.broadcast_to(LINEAR_ROW[None, :, None], (rows, len(QUANTILES), len(HORIZONS))).copy()


class NormalForecaster(QuantileForecaster):
    """Exact quantiles of sums of i.i.d. normal demand."""

    def __init__(self, mean, std):
        super().__init__(np.random.default_rng(0), hidden=(2,))
        m = np.asarray(self.horizons, dtype=float)
        z = stats.norm.ppf(np.asarray(self.quantiles))
        self.grid = m[None, :] * mean + np.sqrt(m)[None, :] * std * z[:, None]

    def predict(self, windows, days=None):
        rows = np.asarray(windows).reshape(-1, self.window).shape[0]
        return np.broadcast_to(self.grid, (rows,) + self.grid.shape).copy()


def single_state(on_hand, pipeline, lead_time=4, mode='lost', underage=4.0, tape=None):
    """Tape state and period-0 context for hand-built single-store scenarios."""
    on_hand = np.asarray(on_hand, dtype=float).reshape(-1, 1)
    rows = on_hand.shape[0]
    pipeline = np.asarray(pipeline, dtype=float).reshape(rows, 1, lead_time - 1)
    instance = nv_instance(mode, underage, 1.0, lead_time)
    batch = ScenarioBatch(
        demand=np.zeros((rows, 10, 1)),
        initial=InitialState(on_hand=on_hand, pipeline=pipeline, window=np.ones((rows, 1, 16))),
    )
    tape = tape or Tape(record=False)
    context = PeriodContext(instance, batch.primitives(instance), batch, 0)
    return build_state(tape, batch.initial), context


def just_in_time_batch(rows=3, periods=12, lead_time=2, seed=0):
    """Scenarios whose opening stock and pipeline exactly cover the first L demands."""
    demand = np.random.default_rng(seed).integers(0, 9, size=(rows, periods, 1)).astype(float)
    initial = InitialState(
        on_hand=demand[:, 0].copy(),
        pipeline=demand[:, 1:lead_time].transpose(0, 2, 1).copy(),
        window=np.zeros((rows, 1, 16)),
    )
    return ScenarioBatch(demand=demand, initial=initial)


class PinballLossTest(SimpleTestCase):
    """Test cases for the multi-horizon quantile loss."""

    def test_median_is_half_absolute_error(self):
        targets = np.array([[10.0], [4.0]])
        grid = np.array([[[7.0]], [[6.0]]])
        self.assertAlmostEqual(pinball_loss(targets, grid, quantiles=(0.5,)), 0.5 * (3.0 + 2.0) / 2)

    def test_perfect_prediction(self):
        targets = np.random.default_rng(0).uniform(0, 10, size=(5, 3))
        grid = np.repeat(targets[:, None, :], len(QUANTILES), axis=1)
        self.assertEqual(pinball_loss(targets, grid), 0.0)

    def test_direct_substitution(self):
        self.assertAlmostEqual(pinball_loss([[10.0]], [[[8.0]]], quantiles=(0.9,)), 1.8)

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            pinball_loss(np.zeros((4, 3)), np.zeros((4, 19, 2)))

    def test_rearrangement_never_increases_loss(self):
        rng = np.random.default_rng(1)
        grid = rng.normal(20, 5, size=(300, len(QUANTILES), 3))
        targets = rng.normal(20, 5, size=(300, 3))
        before = pinball_loss(targets, grid, reduce=False)
        after = pinball_loss(targets, monotone_rearrange(grid), reduce=False)
        self.assertTrue(np.all(after <= before + 1e-9))
        self.assertLess(after.mean(), before.mean())


class QuantileInversionTest(SimpleTestCase):
    """Test cases for reading quantile rows in both directions."""

    def test_knot_value(self):
        tau, degenerate = inverse_quantile(LINEAR_ROW, LINEAR_ROW[9])
        self.assertAlmostEqual(tau, 0.5)
        self.assertFalse(degenerate)

    def test_interpolates_between_knots(self):
        tau, _ = inverse_quantile(LINEAR_ROW, 0.5 * (LINEAR_ROW[9] + LINEAR_ROW[10]))
        self.assertAlmostEqual(tau, 0.525)

    def test_round_trip_inside_grid(self):
        rng = np.random.default_rng(2)
        row = np.sort(rng.uniform(0, 50, size=len(QUANTILES)))
        for level in rng.uniform(row[0], row[-1], size=50):
            tau, _ = inverse_quantile(row, level)
            self.assertAlmostEqual(quantile_at(row, tau), level, delta=1e-9)

    def test_extrapolates_with_edge_slope(self):
        tau, _ = inverse_quantile(LINEAR_ROW, LINEAR_ROW[-1] + 2.0)
        self.assertAlmostEqual(tau, 1.05)
        self.assertAlmostEqual(quantile_at(LINEAR_ROW, 0.0), 10.0)

    def test_degenerate_row(self):
        self.assertEqual(inverse_quantile(np.full(len(QUANTILES), 3.0), 7.0), (0.5, True))

    def test_batch_version(self):
        rows = np.vstack([LINEAR_ROW, np.full(len(QUANTILES), 1.0)])
        taus, flags = inverse_quantiles(rows, [LINEAR_ROW[15], 4.0])
        np.testing.assert_allclose(taus, [0.8, 0.5])
        np.testing.assert_array_equal(flags, [False, True])


class ForecasterTest(SimpleTestCase):
    """Test cases for the quantile forecaster."""

    def test_samples_follow_the_window(self):
        demand = np.arange(30, dtype=float)[None, :]
        samples = make_samples(demand)
        self.assertEqual(len(samples), 30 - 16 - 7 + 1)
        np.testing.assert_array_equal(samples.windows[0], np.arange(16))
        np.testing.assert_array_equal(samples.targets[0], [16 + 17 + 18 + 19 + 20, 111, 133])

    def test_short_traces_rejected(self):
        with self.assertRaises(ValueError):
            make_samples(np.ones((2, 20)))

    def test_prediction_is_monotone_grid(self):
        forecaster = QuantileForecaster(np.random.default_rng(3), hidden=(8,))
        grid = forecaster.predict(np.random.default_rng(4).uniform(0, 20, size=(7, 16)), np.arange(7.0))
        self.assertEqual(grid.shape, (7, len(QUANTILES), len(HORIZONS)))
        self.assertTrue(np.all(np.diff(grid, axis=1) >= 0))

    def test_horizon_index(self):
        forecaster = QuantileForecaster(np.random.default_rng(0), hidden=(2,))
        np.testing.assert_array_equal(forecaster.horizon_index([4, 6, 5]), [0, 2, 1])
        with self.assertRaises(ValueError):
            forecaster.horizon_index([2])

    def test_checkpoint_round_trip(self):
        forecaster = QuantileForecaster(np.random.default_rng(5), hidden=(8, 8))
        windows = np.random.default_rng(6).uniform(0, 20, size=(4, 16))
        with tempfile.TemporaryDirectory() as tmp:
            path = forecaster.save(Path(tmp) / 'forecaster.bin', fingerprint='abc')
            restored = QuantileForecaster.load(path)
        np.testing.assert_array_equal(restored.predict(windows), forecaster.predict(windows))

    def test_calibrated_on_stationary_demand(self):
        model = DemandModel('trunc_normal', mean=10.0, std=3.0)
        train = make_samples(generate(model, periods=60, stores=1, count=200, seed=11).demand)
        dev = make_samples(generate(model, periods=60, stores=1, count=50, seed=12).demand)
        forecaster = QuantileForecaster(np.random.default_rng(7), hidden=(32, 32))
        record = forecaster.fit(train, dev, batch_size=512, learning_rate=0.01, max_steps=800, evaluate_every=100)
        self.assertLess(record.best_dev_loss, record.history[0]['dev_loss'] + 1e-12)
        coverage = forecaster.calibration(dev)
        self.assertLess(np.abs(coverage - np.asarray(QUANTILES)[:, None]).max(), 0.05)
        self.assertEqual(forecaster.loss_ratio(dev).shape, (len(HORIZONS),))

    @tag('slow')
    def test_calibration_within_three_points(self):
        model = DemandModel('trunc_normal', mean=10.0, std=3.0)
        train = make_samples(generate(model, periods=80, stores=1, count=1000, seed=21).demand)
        dev = make_samples(generate(model, periods=80, stores=1, count=300, seed=22).demand)
        forecaster = QuantileForecaster(np.random.default_rng(8), hidden=(64, 64))
        forecaster.fit(train, dev, batch_size=1024, learning_rate=0.005, max_steps=3000, evaluate_every=200)
        coverage = forecaster.calibration(dev)
        self.assertLess(np.abs(coverage - np.asarray(QUANTILES)[:, None]).max(), 0.03)


class GNPolicyTest(SimpleTestCase):
    """Test cases for the generalized newsvendor family."""

    def setUp(self):
        self.forecaster = LinearForecaster()

    def test_critical_ratio(self):
        self.assertAlmostEqual(float(critical_ratio(4.0, 1.0)), 0.8)

    def test_orders_up_to_target(self):
        state, context = single_state([5.0, 30.0], np.zeros((2, 3)))
        orders = gn_policy_step(GNPolicy('newsvendor', self.forecaster), state, context)
        np.testing.assert_allclose(orders, [[21.0], [0.0]])

    def test_pipeline_counts_towards_position(self):
        state, context = single_state([5.0], [[4.0, 3.0, 2.0]])
        orders = gn_policy_step(GNPolicy('newsvendor', self.forecaster), state, context)
        np.testing.assert_allclose(orders, [[12.0]])

    def test_returns_capped_at_on_hand(self):
        state, context = single_state([30.0, 5.0, 5.0], [[0, 0, 0], [0, 0, 25.0], [0, 0, 40.0]])
        orders = gn_policy_step(GNPolicy('returns_newsvendor', self.forecaster), state, context)
        np.testing.assert_allclose(orders, [[-4.0], [-4.0], [-5.0]])

    def test_identity_transform_reproduces_newsvendor(self):
        state, context = single_state(np.linspace(0, 40, 9), np.zeros((9, 3)))
        transformed = GNPolicy('transformed_newsvendor', self.forecaster, np.random.default_rng(0))
        np.testing.assert_array_equal(
            gn_policy_step(transformed, state, context),
            gn_policy_step(GNPolicy('newsvendor', self.forecaster), state, context),
        )

    def test_fixed_quantile_at_critical_ratio(self):
        state, context = single_state(np.linspace(0, 40, 9), np.zeros((9, 3)))
        np.testing.assert_allclose(
            gn_policy_step(GNPolicy('fixed_quantile', self.forecaster, initial_tau=0.8), state, context),
            gn_policy_step(GNPolicy('newsvendor', self.forecaster), state, context),
        )

    def test_admissible_kinds_never_negative(self):
        rng = np.random.default_rng(9)
        state, context = single_state(rng.uniform(0, 60, size=20), rng.uniform(0, 20, size=(20, 3)))
        for kind in ('newsvendor', 'fixed_quantile', 'transformed_newsvendor'):
            policy = GNPolicy(kind, self.forecaster, np.random.default_rng(1), initial_tau=0.3)
            self.assertTrue(policy.admissible)
            self.assertGreaterEqual(gn_policy_step(policy, state, context).min(), 0.0)

    def test_tau_gradient_flows(self):
        tape = Tape(record=True)
        state, context = single_state([5.0], np.zeros((1, 3)), tape=tape)
        policy = GNPolicy('fixed_quantile', self.forecaster, initial_tau=0.5)
        weights = policy.params.bind(tape)
        orders = policy.act(tape, weights, state, context).orders
        grads = backward(total(orders), policy.params)
        self.assertAlmostEqual(float(grads['gn.tau'][0]), 20.0)

    def test_just_in_time_has_zero_cost(self):
        batch = just_in_time_batch()
        instance = nv_instance('lost', 4.0, 1.0, 2)
        result = rollout(GNPolicy('just_in_time'), batch, instance, horizon=10, tape=Tape(record=False), record=True)
        self.assertEqual(result.mean_cost, 0.0)
        self.assertEqual(result.ledger['holding_cost'].sum(), 0.0)
        np.testing.assert_array_equal(result.ledger['sales'], batch.demand[:, :10])

    def test_just_in_time_beyond_trace_end(self):
        batch = just_in_time_batch()
        with self.assertRaises(IndexError):
            rollout(GNPolicy('just_in_time'), batch, nv_instance('lost', 4.0, 1.0, 2), tape=Tape(record=False))

    def test_missing_horizon(self):
        state, context = single_state([5.0], [[0.0]], lead_time=2)
        with self.assertRaises(ValueError):
            gn_policy_step(GNPolicy('newsvendor', self.forecaster), state, context)

    def test_construction_errors(self):
        with self.assertRaises(ValueError):
            GNPolicy('base_stock', self.forecaster)
        with self.assertRaises(ValueError):
            GNPolicy('newsvendor')


class SuiteTest(SimpleTestCase):
    """Test cases for batches, downstream training and the diagnostics."""

    def setUp(self):
        self.store = generate(DemandModel('trunc_normal', mean=10.0, std=3.0), periods=40, stores=1, count=6, seed=5)

    def test_window_comes_from_history(self):
        instance = nv_instance('lost')
        batch = build_nv_batch(self.store, instance, np.random.default_rng(0))
        self.assertEqual(batch.horizon, 24)
        np.testing.assert_array_equal(batch.initial.window[:, 0, :], self.store.demand[:, :16, 0])
        np.testing.assert_array_equal(batch.demand, self.store.demand[:, 16:])

    def test_meta_primitives(self):
        store = assign_meta_primitives(self.store, 9.0, np.random.default_rng(1))
        self.assertTrue(np.all((store.underage >= 6.3) & (store.underage <= 11.7)))
        self.assertTrue(set(np.unique(store.lead_times)) <= {4, 5, 6})
        batch = build_nv_batch(store, nv_instance('lost'), np.random.default_rng(0))
        self.assertEqual(batch.initial.pipeline.shape[2], int(store.lead_times.max()) - 1)

    def test_fixed_kinds_are_not_trained(self):
        batch = build_nv_batch(self.store, nv_instance('lost'), np.random.default_rng(0))
        with self.assertRaises(ValueError):
            train_downstream(GNPolicy('newsvendor', LinearForecaster()), batch, batch, nv_instance('lost'), TrainConfig())

    def test_just_in_time_profit_is_the_reference(self):
        batch = just_in_time_batch(periods=14)
        instance = nv_instance('lost', 4.0, 1.0, 2)
        report, _ = evaluate_policy('just_in_time', GNPolicy('just_in_time'), batch, instance, Horizon(12, 2))
        self.assertAlmostEqual(report.percent_of_jit, 100.0)
        self.assertAlmostEqual(report.mean_profit, report.jit_profit)

    def test_implied_quantile_of_newsvendor_orders(self):
        instance = nv_instance('lost', 4.0, 1.0, 4)
        batch = build_nv_batch(self.store, instance, np.random.default_rng(0))
        forecaster = LinearForecaster()
        horizon = Horizon(20, 4)
        _, ledger = evaluate_policy('newsvendor', GNPolicy('newsvendor', forecaster), batch, instance, horizon)
        frame = implied_quantile_frame(ledger, batch, instance, forecaster, horizon)
        self.assertEqual(len(frame), 6 * 16)
        ordered = ledger['orders'][:, 4:20, 0].reshape(-1) > 0
        np.testing.assert_allclose(frame['implied_quantile'][ordered], 0.8)
        self.assertTrue((frame['implied_quantile'][~ordered] == 0).all())
        self.assertEqual(
            list(frame.columns),
            ['scenario', 'week', 'revenue', 'holding_cost', 'implied_quantile', 'degenerate_forecast',
             'standardized_quantile', 'stockout_ratio'],
        )
        self.assertTrue(frame['stockout_ratio'].tail(3).isna().all())
        self.assertFalse(np.isnan(frame['stockout_ratio'].iloc[-4]))

    def test_stockout_buckets(self):
        frame = pd.DataFrame({
            'standardized_quantile': [-0.15, -0.05, 0.02, 0.08, 0.3],
            'stockout_ratio': [1.0, 3.0, 2.0, 4.0, np.nan],
        })
        buckets = stockout_buckets(frame)
        np.testing.assert_allclose(buckets['bucket'], [-0.2, -0.1, 0.0])
        np.testing.assert_allclose(buckets['stockout_ratio'], [1.0, 3.0, 3.0])
        np.testing.assert_array_equal(buckets['count'], [1, 1, 2])

    def test_learned_quantile_near_critical_ratio(self):
        model = DemandModel('trunc_normal', mean=10.0, std=3.0)
        instance = nv_instance('backlogged', 4.0, 1.0, 4)
        train = build_nv_batch(generate(model, 72, 1, 128, seed=31), instance, np.random.default_rng(1))
        dev = build_nv_batch(generate(model, 72, 1, 128, seed=32), instance, np.random.default_rng(2))
        policy = GNPolicy('fixed_quantile', NormalForecaster(10.0, 3.0), initial_tau=0.5)
        cfg = TrainConfig(
            batch_size=32, learning_rate=0.02, max_gradient_steps=120,
            train_horizon=Horizon(56, 16), dev_horizon=Horizon(56, 16),
        )
        train_downstream(policy, train, dev, instance, cfg)
        self.assertAlmostEqual(float(policy.params['gn.tau'][0]), 0.8, delta=0.05)

    @tag('slow')
    def test_end_to_end_beats_newsvendor_family_under_lost_demand(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'sales.csv'
            synthetic_sales(600, 130, seed=41).to_csv(path, index=False)
            store = ingest_csv(path)
        store = assign_meta_primitives(store, 2.0, np.random.default_rng(2))
        count = len(store)
        store.assign_splits({'train': count // 2, 'dev': count // 4, 'test': count - count // 2 - count // 4})
        train_store = store.split('train')
        forecaster = QuantileForecaster(np.random.default_rng(3), hidden=(64, 64))
        samples = make_samples(train_store.demand, train_store.covariates)
        forecaster.fit(samples, make_samples(store.split('dev').demand, store.split('dev').covariates),
                       batch_size=1024, learning_rate=0.003, max_steps=2000, evaluate_every=200)
        instance = nv_instance('lost')
        batches = {
            label: build_nv_batch(store.split(label), instance, np.random.default_rng(i), max_lead=6)
            for i, label in enumerate(('train', 'dev', 'test'))
        }
        periods = batches['train'].horizon
        cfg = TrainConfig(
            batch_size=64, learning_rate=0.003, max_gradient_steps=1500,
            train_horizon=Horizon(periods, 16), dev_horizon=Horizon(periods, 16), evaluate_every=5,
        )
        result = run_suite(forecaster, batches['train'], batches['dev'], batches['test'], instance, cfg,
                           hidden=(64, 64))
        self.assertGreater(result.reports['hdpo_vanilla'].mean_profit, result.best_newsvendor().mean_profit)
