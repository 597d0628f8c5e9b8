"""
Tests for trainer app.
"""
import csv
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from diffengine import ParamSet, reshape
from envsim.models import ActionVector, InitialState, ProblemInstance, ScenarioBatch
from policies.base import Policy, StateLayout
from policies.vanilla import VanillaPolicy

from .config import Horizon, TrainConfig
from .hdpo import DivergenceError, batch_gradient, evaluate, gap_percent, hdpo_train


class FixedOrderPolicy(Policy):
    """Orders theta every period."""

    def __init__(self, theta):
        super().__init__(ParamSet({'theta': np.array([float(theta)])}))

    def act(self, tape, weights, state, context):
        rows = state.stores.on_hand.shape[0]
        return ActionVector(orders=reshape(weights['theta'], (1, 1)) * np.ones((rows, 1)))


def constant_demand_batch(count=2, periods=10, level=5.0):
    initial = InitialState(on_hand=np.full((count, 1), level), pipeline=np.zeros((count, 1, 0)))
    return ScenarioBatch(demand=np.full((count, periods, 1), level), initial=initial)


def poisson_batch(rng, count, periods=8, lead=2):
    initial = InitialState(
        on_hand=rng.uniform(0.0, 5.0, size=(count, 1)),
        pipeline=rng.uniform(0.0, 5.0, size=(count, 1, lead - 1)),
    )
    return ScenarioBatch(demand=rng.poisson(5.0, size=(count, periods, 1)).astype(float), initial=initial)


class TrainConfigTest(SimpleTestCase):
    """Test cases for hyperparameter validation."""

    def test_burn_in_must_precede_horizon_end(self):
        with self.assertRaises(ValueError):
            Horizon(50, 50)

    def test_rejects_negative_learning_rate(self):
        with self.assertRaises(ValueError):
            TrainConfig(learning_rate=-1.0)


class BatchGradientTest(SimpleTestCase):
    """Test cases for minibatch gradients."""

    def setUp(self):
        rng = np.random.default_rng(31)
        self.instance = ProblemInstance('single_store', 'lost', [9.0], [1.0], [2])
        self.batch = poisson_batch(rng, 6)
        self.policy = VanillaPolicy(self.instance, StateLayout.from_batch(self.batch), [5.0], rng, hidden=(8, 8))
        self.horizon = Horizon(8, 2)

    def test_average_of_scenario_gradients(self):
        _, together = batch_gradient(self.policy, self.batch, self.instance, self.horizon)
        singles = [batch_gradient(self.policy, self.batch.scenario(i), self.instance, self.horizon)[1] for i in range(6)]
        for name in together:
            averaged = np.mean([g[name] for g in singles], axis=0)
            np.testing.assert_allclose(together[name], averaged, rtol=1e-10, atol=1e-12)

    def test_parallelism_does_not_change_gradient(self):
        serial = batch_gradient(self.policy, self.batch, self.instance, self.horizon, shard_size=2, parallelism=1)
        threaded = batch_gradient(self.policy, self.batch, self.instance, self.horizon, shard_size=2, parallelism=3)
        self.assertEqual(serial[0], threaded[0])
        for name in serial[1]:
            np.testing.assert_array_equal(serial[1][name], threaded[1][name])


class EvaluateTest(SimpleTestCase):
    """Test cases for evaluation."""

    def test_single_period_cost(self):
        instance = ProblemInstance('single_store', 'backlogged', [4.0], [1.0], [1])
        initial = InitialState(on_hand=np.array([[2.0], [9.0]]), pipeline=np.zeros((2, 1, 0)))
        batch = ScenarioBatch(demand=np.full((2, 1, 1), 5.0), initial=initial)
        self.assertAlmostEqual(evaluate(FixedOrderPolicy(0.0), batch, instance, Horizon(1, 0)), (12.0 + 4.0) / 2)

    def test_gap_percent(self):
        self.assertAlmostEqual(gap_percent(10.0, 8.0), 25.0)
        with self.assertRaises(ValueError):
            gap_percent(1.0, 0.0)


class HdpoTrainTest(SimpleTestCase):
    """Test cases for the training loop."""

    def setUp(self):
        self.instance = ProblemInstance('single_store', 'backlogged', [4.0], [1.0], [1])
        self.batch = constant_demand_batch()

    def config(self, **overrides):
        values = dict(
            batch_size=2, learning_rate=0.02, max_gradient_steps=500,
            train_horizon=Horizon(10, 0), dev_horizon=Horizon(10, 0),
        )
        values.update(overrides)
        return TrainConfig(**values)

    def test_single_parameter_converges_to_grid_optimum(self):
        grid = np.linspace(3.0, 7.0, 401)
        costs = [evaluate(FixedOrderPolicy(theta), self.batch, self.instance, Horizon(10, 0)) for theta in grid]
        target = grid[int(np.argmin(costs))]

        policy = FixedOrderPolicy(3.0)
        params, record = hdpo_train(policy, self.batch, self.batch, self.instance, self.config())
        self.assertAlmostEqual(float(params['theta'][0]), target, delta=0.1)
        self.assertEqual(record.stop_reason, 'max_gradient_steps')
        self.assertEqual(record.gradient_steps, 500)

    def test_zero_learning_rate_freezes_policy(self):
        policy = FixedOrderPolicy(4.0)
        params, record = hdpo_train(
            policy, self.batch, self.batch, self.instance, self.config(learning_rate=0.0, max_gradient_steps=5),
        )
        self.assertEqual(float(params['theta'][0]), 4.0)
        dev = {epoch.dev_loss for epoch in record.epochs}
        self.assertEqual(len(dev), 1)
        self.assertEqual(record.epochs[-1].train_loss, record.epochs[-1].dev_loss)

    def test_best_dev_loss_matches_returned_parameters(self):
        policy = FixedOrderPolicy(3.0)
        _, record = hdpo_train(policy, self.batch, self.batch, self.instance, self.config(max_gradient_steps=60))
        self.assertEqual(evaluate(policy, self.batch, self.instance, Horizon(10, 0)), record.best_dev_loss)
        self.assertTrue(all(record.best_dev_loss <= epoch.dev_loss for epoch in record.epochs))

    def test_patience_stops_training(self):
        policy = FixedOrderPolicy(5.0)
        _, record = hdpo_train(
            policy, self.batch, self.batch, self.instance, self.config(learning_rate=0.0, patience=3),
        )
        self.assertEqual(record.stop_reason, 'patience')
        self.assertEqual(len(record.epochs), 4)

    def test_identical_runs_are_identical(self):
        rng = np.random.default_rng(41)
        instance = ProblemInstance('single_store', 'lost', [9.0], [1.0], [2])
        train, dev = poisson_batch(rng, 8), poisson_batch(rng, 4)
        cfg = TrainConfig(batch_size=4, learning_rate=1e-2, max_gradient_steps=6,
                          train_horizon=Horizon(8, 2), dev_horizon=Horizon(8, 2), shard_size=2)
        records = []
        for parallelism in (1, 2):
            policy = VanillaPolicy(instance, StateLayout.from_batch(train), [5.0], np.random.default_rng(0), hidden=(8,))
            _, record = hdpo_train(policy, train, dev, instance, replace(cfg, parallelism=parallelism), shuffle_seed=9)
            records.append(record.deterministic_dict())
        self.assertEqual(records[0], records[1])

    def test_non_finite_loss_aborts(self):
        batch = constant_demand_batch()
        batch.demand[0, 3, 0] = np.nan
        with self.assertRaises(DivergenceError):
            hdpo_train(FixedOrderPolicy(5.0), batch, self.batch, self.instance, self.config(max_gradient_steps=2))

    def test_batch_larger_than_training_set(self):
        with self.assertRaises(ValueError):
            hdpo_train(FixedOrderPolicy(5.0), self.batch, self.batch, self.instance, self.config(batch_size=3))

    def test_progress_log(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'progress.csv'
            hdpo_train(FixedOrderPolicy(4.0), self.batch, self.batch, self.instance,
                       self.config(max_gradient_steps=3), progress_path=path)
            with open(path, newline='') as handle:
                rows = list(csv.reader(handle))
        self.assertEqual(rows[0], ['epoch', 'train_loss', 'dev_loss', 'steps', 'seconds'])
        self.assertEqual([row[0] for row in rows[1:]], ['1', '2', '3'])
