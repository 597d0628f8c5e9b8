"""
Tests for policies app.
"""
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from diffengine import Tape, backward, gradients, total
from envsim.models import InitialState, ProblemInstance, ScenarioBatch
from envsim.simulator import PeriodContext, build_state, initialize, rollout

from .base import StateLayout, feature_width, lead_time_one_hot, raw_features
from .checkpoints import load_checkpoint, save_checkpoint
from .feasibility import enforce
from .networks import MLP, merge_arrays
from .serial import SerialPolicy
from .symmetry import SymmetryAwarePolicy
from .vanilla import VanillaPolicy


def warehouse_instance(stores=3, topology='warehouse_stores', lead=2):
    return ProblemInstance(
        topology, 'lost', [9.0] * stores, [1.0] * stores, [lead] * stores,
        warehouse_holding=0.3, warehouse_lead_time=3,
    )


def warehouse_batch(instance, rng, count=4, periods=5):
    initial = initialize(instance, 'uniform', [5.0] * instance.store_count, rng, count)
    initial.warehouse_on_hand = rng.uniform(0.0, 20.0, size=(count, 1))
    demand = rng.poisson(5.0, size=(count, periods, instance.store_count)).astype(float)
    return ScenarioBatch(demand=demand, initial=initial)


class EnforceTest(SimpleTestCase):
    """Test cases for feasibility enforcement."""

    def setUp(self):
        self.tape = Tape()

    def allocate(self, kind, available, b):
        return enforce(kind, self.tape.constant(np.array([[available]])), self.tape.constant(np.array([b]))).value[0]

    def test_proportional_scales_down(self):
        np.testing.assert_allclose(self.allocate('proportional', 10.0, [4.0, 4.0, 4.0]), [10 / 3] * 3)

    def test_proportional_cap_inactive(self):
        np.testing.assert_allclose(self.allocate('proportional', 10.0, [-1.0, 5.0]), [0.0, 5.0])

    def test_proportional_nothing_requested(self):
        np.testing.assert_array_equal(self.allocate('proportional', 10.0, [-1.0, 0.0]), [0.0, 0.0])

    def test_softmax_keeps_reserve(self):
        np.testing.assert_allclose(self.allocate('softmax', 9.0, [0.0, 0.0]), [3.0, 3.0])

    def test_softmax_without_constant_ships_everything(self):
        self.assertAlmostEqual(float(self.allocate('softmax_no_constant', 9.0, [0.3, -2.0, 1.0]).sum()), 9.0)

    def test_serial_sigmoid(self):
        tape = self.tape
        upstream = tape.constant(np.array([[8.0, 0.0]]))
        transfer = enforce('serial_sigmoid', upstream, tape.constant(np.array([[0.0, 3.0]])))
        np.testing.assert_allclose(transfer.value, [[4.0, 0.0]])

    def test_unknown_kind(self):
        with self.assertRaises(ValueError):
            self.allocate('greedy', 1.0, [1.0])

    def test_fuzzed_allocations_are_feasible(self):
        rng = np.random.default_rng(5)
        available = self.tape.constant(rng.exponential(10.0, size=(20_000, 1)) * (rng.uniform(size=(20_000, 1)) > 0.05))
        intermediate = self.tape.constant(rng.normal(scale=20.0, size=(20_000, 6)))
        for kind in ('proportional', 'softmax', 'softmax_no_constant'):
            with self.subTest(kind=kind):
                allocation = enforce(kind, available, intermediate).value
                self.assertGreaterEqual(allocation.min(), 0.0)
                self.assertTrue(np.all(allocation.sum(axis=1) <= available.value[:, 0] * (1 + 1e-12)))

    def test_proportional_gradient_matches_finite_differences(self):
        b = np.array([[3.0, 5.0, 2.0]])
        weights = np.array([[1.0, 2.0, -1.0]])

        def value(arr):
            tape = Tape(record=False)
            return float(total(enforce('proportional', tape.constant([[6.0]]), tape.constant(arr)) * weights).value)

        tape = Tape()
        leaf = tape.variable(b, name='b')
        (analytic,) = gradients(total(enforce('proportional', tape.constant([[6.0]]), leaf) * weights), [leaf])
        numeric = np.zeros_like(b)
        for j in range(3):
            up, down = b.copy(), b.copy()
            up[0, j] += 1e-6
            down[0, j] -= 1e-6
            numeric[0, j] = (value(up) - value(down)) / 2e-6
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5)


class FeatureTest(SimpleTestCase):
    """Test cases for raw state features."""

    def test_lead_time_one_hot(self):
        encoded = lead_time_one_hot(np.array([[1, 3]]), 3)
        np.testing.assert_array_equal(encoded, [[1, 0, 0, 0, 0, 1]])

    def test_feature_width_matches_features(self):
        rng = np.random.default_rng(2)
        instance = warehouse_instance()
        batch = warehouse_batch(instance, rng)
        layout = StateLayout.from_batch(batch)
        tape = Tape()
        state = build_state(tape, batch.initial)
        context = PeriodContext(instance, batch.primitives(instance), batch, 0)
        features = raw_features(tape, state, context, include_primitives=True, max_lead=layout.max_lead)
        width = feature_width(instance, layout.slots, layout.warehouse_slots, include_primitives=True, max_lead=layout.max_lead)
        self.assertEqual(features.shape, (4, width))


class VanillaPolicyTest(SimpleTestCase):
    """Test cases for the vanilla network."""

    def setUp(self):
        self.rng = np.random.default_rng(13)

    def test_zero_logit_orders_half_the_cap(self):
        instance = warehouse_instance()
        batch = warehouse_batch(instance, self.rng)
        policy = VanillaPolicy(instance, StateLayout.from_batch(batch), [5.0] * 3, self.rng)
        policy.params.assign({name: np.zeros_like(value) for name, value in policy.params.items()})
        tape = Tape()
        action = policy.act(tape, policy.params.bind(tape), build_state(tape, batch.initial),
                            PeriodContext(instance, batch.primitives(instance), batch, 0))
        self.assertEqual(policy.max_order, 4.0 * 3 * 15.0)
        np.testing.assert_allclose(action.warehouse_order.value, policy.max_order / 2)

    def test_single_store_order_vanishes_for_negative_head(self):
        instance = ProblemInstance('single_store', 'lost', [4.0], [1.0], [1])
        demand = np.full((2, 3, 1), 5.0)
        batch = ScenarioBatch(demand=demand, initial=InitialState(on_hand=np.zeros((2, 1)), pipeline=np.zeros((2, 1, 0))))
        policy = VanillaPolicy(instance, StateLayout.from_batch(batch), [5.0], self.rng, hidden=(4,))
        arrays = {name: np.zeros_like(value) for name, value in policy.params.items()}
        arrays['vanilla.b1'] = np.array([-60.0])
        policy.params.assign(arrays)
        result = rollout(policy, batch, instance, record=True)
        self.assertLess(result.ledger['orders'].max(), 1e-20)

    def test_transshipment_warehouse_keeps_nothing(self):
        instance = warehouse_instance(topology='transshipment')
        batch = warehouse_batch(instance, self.rng)
        policy = VanillaPolicy(instance, StateLayout.from_batch(batch), [5.0] * 3, self.rng)
        tape = Tape()
        state = build_state(tape, batch.initial)
        action = policy.act(tape, policy.params.bind(tape), state, PeriodContext(instance, batch.primitives(instance), batch, 0))
        np.testing.assert_allclose(action.orders.value.sum(axis=1), state.warehouse.on_hand.value[:, 0])

    def test_rollout_gradient_reaches_every_parameter(self):
        instance = warehouse_instance()
        batch = warehouse_batch(instance, self.rng, periods=6)
        policy = VanillaPolicy(instance, StateLayout.from_batch(batch), [5.0] * 3, self.rng)
        tape = Tape()
        grads = backward(rollout(policy, batch, instance, tape=tape).loss, policy.params)
        self.assertEqual(set(grads), set(policy.params.names))
        self.assertTrue(all(np.all(np.isfinite(g)) for g in grads.values()))


class SymmetryAwarePolicyTest(SimpleTestCase):
    """Test cases for the weight-shared policy."""

    def setUp(self):
        self.rng = np.random.default_rng(17)
        self.instance = warehouse_instance(stores=4)

    def allocation(self, policy, initial, underage):
        demand = np.zeros((initial.on_hand.shape[0], 1, 4))
        batch = ScenarioBatch(demand=demand, initial=initial, underage=underage)
        tape = Tape()
        context = PeriodContext(self.instance, batch.primitives(self.instance), batch, 0)
        return policy.act(tape, policy.params.bind(tape), build_state(tape, initial), context)

    def check_equivariance(self, context_dim):
        means, cvs = np.array([4.0, 5.0, 6.0, 7.0]), np.array([0.2, 0.3, 0.25, 0.4])
        layout = StateLayout(slots=1, warehouse_slots=2, max_lead=2)
        policy = SymmetryAwarePolicy(self.instance, layout, means, cvs, self.rng,
                                     context_dim=context_dim, context_hidden=(8,))
        initial = initialize(self.instance, 'uniform', means, self.rng, 3)
        initial.warehouse_on_hand = np.full((3, 1), 12.0)
        underage = self.rng.uniform(5.0, 10.0, size=(3, 4))
        base = self.allocation(policy, initial, underage)

        order = np.array([2, 0, 3, 1])
        permuted_policy = SymmetryAwarePolicy(self.instance, layout, means[order], cvs[order], self.rng,
                                              context_dim=context_dim, context_hidden=(8,))
        permuted_policy.params.assign(policy.params.snapshot())
        permuted = InitialState(
            on_hand=initial.on_hand[:, order],
            pipeline=initial.pipeline[:, order],
            warehouse_on_hand=initial.warehouse_on_hand,
            warehouse_pipeline=initial.warehouse_pipeline,
        )
        moved = self.allocation(permuted_policy, permuted, underage[:, order])
        np.testing.assert_allclose(moved.orders.value, base.orders.value[:, order], rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(moved.warehouse_order.value, base.warehouse_order.value, rtol=1e-12)

    def test_permutation_equivariance_without_context(self):
        self.check_equivariance(0)

    def test_permutation_equivariance_with_context(self):
        self.check_equivariance(6)

    def test_identical_stores_get_identical_allocations(self):
        layout = StateLayout(slots=1, warehouse_slots=2, max_lead=2)
        policy = SymmetryAwarePolicy(self.instance, layout, [5.0] * 4, [0.3] * 4, self.rng, context_dim=4, context_hidden=(8,))
        initial = InitialState(
            on_hand=np.full((1, 4), 2.0), pipeline=np.full((1, 4, 1), 1.0),
            warehouse_on_hand=np.array([[30.0]]), warehouse_pipeline=np.zeros((1, 1, 2)),
        )
        action = self.allocation(policy, initial, np.full((1, 4), 9.0))
        self.assertTrue(np.allclose(action.orders.value, action.orders.value[0, 0]))

    def test_store_network_is_shared(self):
        layout = StateLayout(slots=1, warehouse_slots=2, max_lead=2)
        small = SymmetryAwarePolicy(warehouse_instance(stores=2), layout, [5.0] * 2, [0.3] * 2, self.rng, context_dim=4)
        large = SymmetryAwarePolicy(warehouse_instance(stores=9), layout, [5.0] * 9, [0.3] * 9, self.rng, context_dim=4)
        self.assertEqual(small.params.size(), large.params.size())

    def test_parameters_of_every_network_are_kept(self):
        layout = StateLayout(slots=1, warehouse_slots=2, max_lead=2)
        policy = SymmetryAwarePolicy(self.instance, layout, [5.0] * 4, [0.3] * 4, self.rng, context_dim=4, context_hidden=(8,))
        prefixes = {name.split('.')[0] for name in policy.params.names}
        self.assertEqual(prefixes, {'context', 'warehouse', 'store'})
        expected = sum(len(net.initial_arrays(self.rng)) for net in (policy.context_net, policy.warehouse_net, policy.store_net))
        self.assertEqual(len(policy.params), expected)

    def test_needs_a_warehouse(self):
        instance = ProblemInstance('single_store', 'lost', [4.0], [1.0], [1])
        with self.assertRaises(ValueError):
            SymmetryAwarePolicy(instance, StateLayout(slots=0), [5.0], [0.3], self.rng)


class SerialPolicyTest(SimpleTestCase):
    """Test cases for the serial gated network."""

    def test_transfers_respect_upstream_inventory(self):
        rng = np.random.default_rng(23)
        instance = ProblemInstance('serial', 'backlogged', [9.0], [0.25, 0.5, 1.0], [2, 2, 1])
        initial = InitialState(on_hand=np.array([[0.0, 6.0, 1.0]]), pipeline=np.zeros((1, 3, 1)))
        batch = ScenarioBatch(demand=np.full((1, 2, 1), 3.0), initial=initial)
        policy = SerialPolicy(instance, StateLayout.from_batch(batch), [3.0], rng)
        policy.params.assign({name: np.zeros_like(value) for name, value in policy.params.items()})
        tape = Tape()
        action = policy.act(tape, policy.params.bind(tape), build_state(tape, initial),
                            PeriodContext(instance, batch.primitives(instance), batch, 0))
        np.testing.assert_allclose(action.orders.value, [[policy.max_order / 2, 0.0, 3.0]])


class CheckpointTest(SimpleTestCase):
    """Test cases for the checkpoint container."""

    def test_save_and_load(self):
        arrays = {'net.w0.state': np.arange(6.0).reshape(2, 3), 'net.b0': np.array([0.5, -1.5, 2.0]), 'scale': np.array(3.0)}
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(Path(tmp) / 'best.ckpt', arrays, 'abc123', meta={'architecture': 'vanilla'})
            loaded, header = load_checkpoint(path)
        self.assertEqual(list(loaded), list(arrays))
        for name in arrays:
            np.testing.assert_array_equal(loaded[name], arrays[name])
        self.assertEqual(header['fingerprint'], 'abc123')
        self.assertEqual(header['meta']['architecture'], 'vanilla')

    def test_rejects_foreign_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'junk.ckpt'
            path.write_bytes(b'\x02\x00\x00\x00\x00\x00\x00\x00{}')
            with self.assertRaises(ValueError):
                load_checkpoint(path)


class MergeArraysTest(SimpleTestCase):
    """Test cases for combining network parameters."""

    def test_distinct_prefixes_merge(self):
        rng = np.random.default_rng(3)
        merged = merge_arrays(MLP('a', [('x', 2)], [3], 1).initial_arrays(rng),
                              MLP('b', [('x', 2)], [3], 1).initial_arrays(rng))
        self.assertEqual(len(merged), 8)

    def test_shared_prefix_is_rejected(self):
        rng = np.random.default_rng(3)
        with self.assertRaises(ValueError):
            merge_arrays(MLP('a', [('x', 2)], [3], 1).initial_arrays(rng),
                         MLP('a', [('y', 2)], [3], 1).initial_arrays(rng))
