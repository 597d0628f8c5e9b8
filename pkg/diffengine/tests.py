"""
Tests for diffengine app.
"""
import numpy as np
from django.test import SimpleTestCase

from .params import Adam, ParamSet
from .tape import (
    ShapeError,
    Tape,
    activation,
    affine,
    backward,
    concat,
    gradients,
    mean,
    minimum,
    piecewise_linear,
    softmax_with_reserve,
    stack,
    stop_gradient,
    total,
)


def numeric_gradient(fn, x, eps=1e-6):
    grad = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[i] += eps
        down[i] -= eps
        grad[i] = (fn(up) - fn(down)) / (2 * eps)
    return grad


class GradientCheckTest(SimpleTestCase):
    """Test cases for reverse-mode gradients against central differences."""

    def setUp(self):
        self.rng = np.random.default_rng(7)

    def check(self, build, x):
        def value(arr):
            return float(build(Tape(record=False).constant(arr)).value)

        tape = Tape()
        leaf = tape.variable(x, name='x')
        (analytic,) = gradients(build(leaf), [leaf])
        np.testing.assert_allclose(analytic, numeric_gradient(value, x), rtol=1e-5, atol=1e-7)

    def test_arithmetic_chain(self):
        x = self.rng.uniform(0.5, 2.0, size=(3, 4))
        self.check(lambda v: total((v * v - 3.0 * v) / (v + 1.0)), x)

    def test_broadcast_add_reduces_gradient(self):
        x = self.rng.normal(size=(1, 4))
        other = self.rng.normal(size=(5, 4))
        self.check(lambda v: total((v + other) * other), x)

    def test_affine_with_leading_axes(self):
        W = self.rng.normal(size=(3, 2))
        x = self.rng.normal(size=(2, 4, 3))
        self.check(lambda v: total(activation(affine(v, W), 'elu')), x)

    def test_activations(self):
        x = self.rng.normal(size=(6,)) + 0.05
        for kind in ('elu', 'softplus', 'sigmoid'):
            with self.subTest(kind=kind):
                self.check(lambda v, kind=kind: total(activation(v, kind) * np.arange(6.0)), x)

    def test_softmax_with_reserve(self):
        x = self.rng.normal(size=(2, 5))
        weights = self.rng.normal(size=(2, 5))
        for include in (True, False):
            with self.subTest(include_constant=include):
                self.check(lambda v, inc=include: total(softmax_with_reserve(v, inc) * weights), x)

    def test_piecewise_linear_in_query_and_values(self):
        knots = np.array([0.0, 1.0, 2.5, 4.0])
        values = self.rng.uniform(size=(3, 4)).cumsum(axis=1)
        x = np.array([0.3, 2.0, 5.0])
        self.check(lambda v: total(piecewise_linear(v, knots, values)), x)
        self.check(lambda v: total(piecewise_linear(x, knots, v)), values)

    def test_concat_stack_mean(self):
        a = self.rng.normal(size=(2, 3))
        b = self.rng.normal(size=(2, 3))
        self.check(lambda v: mean(concat([v, v * b], axis=1) * 2.0), a)
        self.check(lambda v: total(stack([v, b], axis=-1) * stack([b, v], axis=-1)), a)


class TapeSemanticsTest(SimpleTestCase):
    """Test cases for tape bookkeeping and edge behavior."""

    def test_no_path_gives_zero_gradient(self):
        tape = Tape()
        x = tape.variable(np.ones(3), name='x')
        y = tape.variable(np.ones(2), name='y')
        gx, gy = gradients(total(x * 2.0), [x, y])
        np.testing.assert_array_equal(gx, np.full(3, 2.0))
        np.testing.assert_array_equal(gy, np.zeros(2))

    def test_stop_gradient_blocks_flow(self):
        tape = Tape()
        x = tape.variable(np.array([1.0, 2.0]), name='x')
        (g,) = gradients(total(stop_gradient(x) * x), [x])
        np.testing.assert_array_equal(g, np.array([1.0, 2.0]))

    def test_minimum_tie_goes_to_first_operand(self):
        tape = Tape()
        a = tape.variable(np.array([1.0, 3.0]), name='a')
        b = tape.variable(np.array([1.0, 2.0]), name='b')
        ga, gb = gradients(total(minimum(a, b)), [a, b])
        np.testing.assert_array_equal(ga, [1.0, 0.0])
        np.testing.assert_array_equal(gb, [0.0, 1.0])

    def test_relu_subgradient_at_zero(self):
        tape = Tape()
        x = tape.variable(np.array([0.0, 1.0, -1.0]), name='x')
        (g,) = gradients(total(activation(x, 'relu_pos')), [x])
        np.testing.assert_array_equal(g, [0.0, 1.0, 0.0])

    def test_softmax_is_stable_for_large_inputs(self):
        tape = Tape()
        x = tape.variable(np.array([[1000.0, 999.0, -1000.0]]), name='x')
        y = softmax_with_reserve(x, include_constant=True)
        self.assertTrue(np.all(np.isfinite(y.value)))
        self.assertLess(float(y.value.sum()), 1.0)
        free = softmax_with_reserve(x, include_constant=False)
        self.assertAlmostEqual(float(free.value.sum()), 1.0)

    def test_softmax_reserve_value(self):
        tape = Tape()
        y = softmax_with_reserve(tape.constant(np.zeros((1, 3))), include_constant=True)
        np.testing.assert_allclose(y.value, np.full((1, 3), 0.25))

    def test_shape_mismatch_raises(self):
        tape = Tape()
        with self.assertRaises(ShapeError):
            tape.variable(np.ones((2, 3))) + tape.variable(np.ones((4, 3)))
        with self.assertRaises(ShapeError):
            affine(tape.constant(np.ones((2, 3))), tape.constant(np.ones((2, 2))))
        with self.assertRaises(ShapeError):
            gradients(tape.variable(np.ones(2)), [])

    def test_no_grad_tape_records_nothing(self):
        tape = Tape(record=False)
        x = tape.variable(np.ones(3), name='x')
        total(x * x)
        self.assertEqual(tape.nodes, [])
        self.assertEqual(tape.leaves, {})

    def test_piecewise_linear_extrapolates_edge_slopes(self):
        tape = Tape()
        values = tape.constant(np.array([[0.0, 1.0, 3.0]]))
        knots = np.array([0.0, 1.0, 2.0])
        low = piecewise_linear(tape.constant(np.array([-1.0])), knots, values)
        high = piecewise_linear(tape.constant(np.array([3.0])), knots, values)
        self.assertAlmostEqual(float(low.value[0]), -1.0)
        self.assertAlmostEqual(float(high.value[0]), 5.0)


class ParamSetTest(SimpleTestCase):
    """Test cases for ParamSet and Adam."""

    def setUp(self):
        self.params = ParamSet({'w': np.array([1.0, -2.0]), 'b': np.array(0.5)})

    def test_backward_zero_for_unbound_parameters(self):
        tape = Tape()
        w = tape.variable(self.params['w'], name='w')
        grads = backward(total(w * w), self.params)
        np.testing.assert_array_equal(grads['w'], [2.0, -4.0])
        self.assertEqual(grads['b'].shape, ())
        self.assertEqual(float(grads['b']), 0.0)

    def test_assign_rejects_wrong_shape(self):
        with self.assertRaises(ShapeError):
            self.params.assign({'w': np.zeros(3)})
        with self.assertRaises(KeyError):
            self.params.assign({'missing': np.zeros(1)})

    def test_first_adam_step_moves_by_learning_rate(self):
        Adam(self.params, learning_rate=0.1).step({'w': np.array([3.0, -0.5]), 'b': np.array(0.0)})
        np.testing.assert_allclose(self.params['w'], [0.9, -1.9], atol=1e-6)
        self.assertEqual(float(self.params['b']), 0.5)
        self.assertEqual(self.params.step_count, 1)

    def test_zero_learning_rate_keeps_values(self):
        before = self.params.snapshot()
        Adam(self.params, learning_rate=0.0).step({'w': np.ones(2), 'b': np.array(1.0)})
        np.testing.assert_array_equal(self.params['w'], before['w'])

    def test_copy_is_independent(self):
        clone = self.params.copy()
        clone.assign({'w': np.zeros(2)})
        np.testing.assert_array_equal(self.params['w'], [1.0, -2.0])
