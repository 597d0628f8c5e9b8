"""
Tests for envsim app.
"""
import numpy as np
from django.test import SimpleTestCase

from diffengine import ParamSet, Tape, backward, columns, reshape
from policies.base import Policy

from .models import ActionVector, InfeasibleActionError, InitialState, ProblemInstance, ScenarioBatch
from .simulator import LeadTimeQueue, PeriodContext, build_state, initialize, rollout, step


class ConstantPolicy(Policy):
    """Orders the same quantity at every store every period."""

    def __init__(self, quantity, warehouse_quantity=None):
        super().__init__()
        self.quantity = quantity
        self.warehouse_quantity = warehouse_quantity

    def act(self, tape, weights, state, context):
        rows, cols = state.stores.on_hand.shape
        orders = tape.constant(np.full((rows, cols), float(self.quantity)))
        warehouse = None
        if self.warehouse_quantity is not None:
            warehouse = tape.constant(np.full((rows, 1), float(self.warehouse_quantity)))
        return ActionVector(orders=orders, warehouse_order=warehouse)


class ScheduledPolicy(Policy):
    """One trainable order per period, shared by every scenario."""

    def __init__(self, schedule):
        super().__init__(ParamSet({'schedule': np.asarray(schedule, dtype=float)}))

    def act(self, tape, weights, state, context):
        rows = state.stores.on_hand.shape[0]
        periods = weights['schedule'].shape[0]
        order = columns(reshape(weights['schedule'], (1, periods)), context.period, context.period + 1)
        return ActionVector(orders=order * np.ones((rows, 1)))


class LookaheadPolicy(Policy):
    """Orders next period's demand; the last period orders nothing."""

    def act(self, tape, weights, state, context):
        if context.period + 1 < context.batch.horizon:
            return ActionVector(orders=tape.constant(context.future_demand(1)))
        return ActionVector(orders=tape.constant(np.zeros(state.stores.on_hand.shape)))


def single_store(mode='backlogged', underage=4.0, holding=1.0, lead_time=1):
    return ProblemInstance('single_store', mode, [underage], [holding], [lead_time])


def batch_of(demand, on_hand, slots=0):
    demand = np.asarray(demand, dtype=float)
    rows, _, cols = demand.shape
    initial = InitialState(
        on_hand=np.broadcast_to(np.asarray(on_hand, dtype=float), (rows, cols)).copy(),
        pipeline=np.zeros((rows, cols, slots)),
    )
    return ScenarioBatch(demand=demand, initial=initial)


class StepTest(SimpleTestCase):
    """Test cases for one-period transitions."""

    def setUp(self):
        self.tape = Tape()

    def single_step(self, instance, on_hand, order, demand):
        state = build_state(self.tape, InitialState(on_hand=np.array([[on_hand]]), pipeline=np.zeros((1, 1, 0))))
        action = ActionVector(orders=self.tape.constant(np.array([[order]])))
        return step(state, action, np.array([[demand]]), instance)

    def test_backlogged_shortfall(self):
        following, cost = self.single_step(single_store('backlogged'), 5.0, 0.0, 7.0)
        self.assertEqual(float(following.stores.on_hand.value[0, 0]), -2.0)
        self.assertEqual(float(cost.value[0]), 8.0)

    def test_lost_shortfall_with_arrival(self):
        following, cost = self.single_step(single_store('lost'), 5.0, 3.0, 7.0)
        self.assertEqual(float(following.stores.on_hand.value[0, 0]), 3.0)
        self.assertEqual(float(cost.value[0]), 8.0)

    def test_warehouse_holding_cost(self):
        instance = ProblemInstance(
            'warehouse_stores', 'lost', [4.0, 4.0], [1.0, 1.0], [1, 1],
            warehouse_holding=0.3, warehouse_lead_time=1,
        )
        initial = InitialState(
            on_hand=np.array([[3.0, 3.0]]),
            pipeline=np.zeros((1, 2, 0)),
            warehouse_on_hand=np.array([[10.0]]),
            warehouse_pipeline=np.zeros((1, 1, 0)),
        )
        state = build_state(self.tape, initial)
        action = ActionVector(
            orders=self.tape.constant(np.array([[2.0, 2.0]])),
            warehouse_order=self.tape.constant(np.array([[0.0]])),
        )
        following, cost = step(state, action, np.array([[3.0, 3.0]]), instance)
        self.assertAlmostEqual(float(cost.value[0]), 1.8)
        self.assertAlmostEqual(float(following.warehouse.on_hand.value[0, 0]), 6.0)
        np.testing.assert_allclose(following.stores.on_hand.value, [[2.0, 2.0]])

    def test_serial_charges_upstream_after_transfer(self):
        instance = ProblemInstance('serial', 'backlogged', [9.0], [0.5, 1.0], [1, 1])
        state = build_state(self.tape, InitialState(on_hand=np.array([[10.0, 2.0]]), pipeline=np.zeros((1, 2, 0))))
        action = ActionVector(orders=self.tape.constant(np.array([[0.0, 4.0]])))
        following, cost = step(state, action, np.array([[3.0]]), instance)
        self.assertAlmostEqual(float(cost.value[0]), 12.0)
        np.testing.assert_allclose(following.stores.on_hand.value, [[6.0, 3.0]])

    def test_negative_order_is_rejected(self):
        with self.assertRaises(InfeasibleActionError):
            self.single_step(single_store(), 5.0, -1.0, 2.0)

    def test_overallocation_is_rejected(self):
        instance = ProblemInstance(
            'warehouse_stores', 'lost', [4.0, 4.0], [1.0, 1.0], [1, 1],
            warehouse_holding=0.3, warehouse_lead_time=1,
        )
        initial = InitialState(
            on_hand=np.zeros((1, 2)),
            pipeline=np.zeros((1, 2, 0)),
            warehouse_on_hand=np.array([[3.0]]),
            warehouse_pipeline=np.zeros((1, 1, 0)),
        )
        action = ActionVector(
            orders=self.tape.constant(np.array([[2.0, 2.0]])),
            warehouse_order=self.tape.constant(np.array([[0.0]])),
        )
        with self.assertRaises(InfeasibleActionError):
            step(build_state(self.tape, initial), action, np.zeros((1, 2)), instance)


class LeadTimeQueueTest(SimpleTestCase):
    """Test cases for padded pipelines with mixed lead times."""

    def test_mixed_lead_times(self):
        tape = Tape()
        queue = LeadTimeQueue(np.array([[1, 3]]), slots=2)
        pipeline = [tape.constant(np.array([[0.0, 5.0]])), tape.constant(np.array([[0.0, 6.0]]))]
        arrival, following = queue.advance(pipeline, tape.constant(np.array([[7.0, 8.0]])))
        np.testing.assert_array_equal(arrival.value, [[7.0, 5.0]])
        np.testing.assert_array_equal(following[0].value, [[0.0, 6.0]])
        np.testing.assert_array_equal(following[1].value, [[0.0, 8.0]])

    def test_lead_time_longer_than_queue_rejected(self):
        with self.assertRaises(ValueError):
            LeadTimeQueue(np.array([[4]]), slots=2)


class RolloutTest(SimpleTestCase):
    """Test cases for multi-period rollouts."""

    def setUp(self):
        self.rng = np.random.default_rng(11)

    def test_zero_orders_accumulate_backlog(self):
        instance = ProblemInstance('single_store', 'backlogged', [1.0], [1.0], [1])
        result = rollout(ConstantPolicy(0.0), batch_of(np.full((1, 2, 1), 4.0), 0.0), instance)
        self.assertAlmostEqual(float(result.total_cost.value[0]), 12.0)
        self.assertAlmostEqual(result.mean_cost, 6.0)

    def test_lookahead_orders_cost_nothing(self):
        demand = self.rng.uniform(1.0, 9.0, size=(3, 6, 1))
        batch = batch_of(demand, demand[:, 0, :])
        result = rollout(LookaheadPolicy(), batch, single_store('lost'))
        np.testing.assert_allclose(result.per_scenario, 0.0, atol=1e-12)

    def test_burn_in_excludes_leading_periods(self):
        instance = ProblemInstance('single_store', 'backlogged', [1.0], [1.0], [1])
        result = rollout(ConstantPolicy(0.0), batch_of(np.full((1, 3, 1), 2.0), 0.0), instance, burn_in=2)
        self.assertAlmostEqual(float(result.total_cost.value[0]), 6.0)
        self.assertAlmostEqual(result.mean_cost, 6.0)

    def test_horizon_and_burn_in_validated(self):
        batch = batch_of(np.ones((1, 3, 1)), 0.0)
        with self.assertRaises(ValueError):
            rollout(ConstantPolicy(0.0), batch, single_store(), horizon=4)
        with self.assertRaises(ValueError):
            rollout(ConstantPolicy(0.0), batch, single_store(), horizon=3, burn_in=3)

    def test_lost_mode_never_negative(self):
        instance = single_store('lost', lead_time=3)
        demand = self.rng.poisson(5.0, size=(16, 40, 1)).astype(float)
        batch = batch_of(demand, 2.0, slots=2)
        result = rollout(ConstantPolicy(4.0), batch, instance, record=True)
        self.assertGreaterEqual(result.ledger['on_hand'].min(), 0.0)

    def test_future_demand_past_trace_end(self):
        batch = batch_of(np.ones((1, 3, 1)), 0.0)
        context = PeriodContext(single_store(), batch.primitives(single_store()), batch, 2)
        with self.assertRaises(IndexError):
            context.future_demand(1)

    def test_gradient_matches_finite_differences(self):
        instance = single_store('backlogged', lead_time=2)
        demand = self.rng.uniform(2.0, 8.0, size=(4, 6, 1))
        batch = batch_of(demand, 3.0, slots=1)
        schedule = self.rng.uniform(3.0, 7.0, size=6)
        policy = ScheduledPolicy(schedule)
        tape = Tape()
        result = rollout(policy, batch, instance, tape=tape)
        analytic = backward(result.loss, policy.params)['schedule']

        eps = 1e-6
        numeric = np.zeros_like(schedule)
        for i in range(schedule.size):
            shifted = []
            for sign in (1.0, -1.0):
                moved = schedule.copy()
                moved[i] += sign * eps
                shifted.append(rollout(ScheduledPolicy(moved), batch, instance, tape=Tape(record=False)).mean_cost)
            numeric[i] = (shifted[0] - shifted[1]) / (2 * eps)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)

    def test_system_inventory_is_conserved(self):
        instance = ProblemInstance(
            'warehouse_stores', 'backlogged', [4.0, 4.0, 4.0], [1.0, 1.0, 1.0], [2, 2, 2],
            warehouse_holding=0.3, warehouse_lead_time=3,
        )
        initial = initialize(instance, 'uniform', [5.0, 5.0, 5.0], self.rng, 2)
        initial.warehouse_on_hand = np.full((2, 1), 20.0)
        tape = Tape()
        state = build_state(tape, initial)

        def system_inventory(s):
            parts = [s.stores.on_hand.value.sum(axis=1), s.warehouse.on_hand.value.sum(axis=1)]
            parts += [slot.value.sum(axis=1) for slot in s.stores.pipeline + s.warehouse.pipeline]
            return np.sum(parts, axis=0)

        for _ in range(5):
            demand = self.rng.uniform(0.0, 9.0, size=(2, 3))
            order = self.rng.uniform(0.0, 12.0, size=(2, 1))
            allocation = state.warehouse.on_hand.value / 4.0 * np.ones((1, 3))
            before = system_inventory(state)
            action = ActionVector(orders=tape.constant(allocation), warehouse_order=tape.constant(order))
            state, _ = step(state, action, demand, instance)
            np.testing.assert_allclose(system_inventory(state), before + order[:, 0] - demand.sum(axis=1))


class InitializeTest(SimpleTestCase):
    """Test cases for initial-state sampling."""

    def setUp(self):
        self.rng = np.random.default_rng(3)
        self.instance = single_store(lead_time=3)

    def test_zero_mode(self):
        initial = initialize(self.instance, 'zero', 5.0, self.rng, 4)
        self.assertFalse(initial.on_hand.any())
        self.assertEqual(initial.pipeline.shape, (4, 1, 2))
        self.assertFalse(initial.pipeline.any())

    def test_uniform_with_zero_mean(self):
        initial = initialize(self.instance, 'uniform', 0.0, self.rng, 4)
        self.assertFalse(initial.on_hand.any())
        self.assertFalse(initial.pipeline.any())

    def test_uniform_mean_is_half_the_sample_mean(self):
        initial = initialize(self.instance, 'uniform', 6.0, self.rng, 100_000)
        self.assertAlmostEqual(initial.on_hand.mean() / 3.0, 1.0, delta=0.01)

    def test_padding_slots_stay_empty(self):
        instance = ProblemInstance('warehouse_stores', 'lost', [4.0, 4.0], [1.0, 1.0], [1, 3],
                                   warehouse_holding=0.3, warehouse_lead_time=2)
        initial = initialize(instance, 'uniform', [5.0, 5.0], self.rng, 50)
        self.assertFalse(initial.pipeline[:, 0, :].any())
        self.assertTrue(initial.pipeline[:, 1, :].all())
        self.assertFalse(initial.warehouse_on_hand.any())
        self.assertEqual(initial.warehouse_pipeline.shape, (50, 1, 1))

    def test_unknown_mode(self):
        with self.assertRaises(ValueError):
            initialize(self.instance, 'random', 5.0, self.rng, 1)


class ProblemInstanceTest(SimpleTestCase):
    """Test cases for instance validation."""

    def test_warehouse_holding_must_be_cheapest(self):
        with self.assertRaises(ValueError):
            ProblemInstance('warehouse_stores', 'lost', [4.0], [1.0], [1], warehouse_holding=1.0, warehouse_lead_time=1)

    def test_serial_must_be_backlogged(self):
        with self.assertRaises(ValueError):
            ProblemInstance('serial', 'lost', [9.0], [1.0, 2.0], [1, 1])

    def test_lead_time_at_least_one(self):
        with self.assertRaises(ValueError):
            single_store(lead_time=0)
