"""
Reverse-mode automatic differentiation over dense float64 arrays.

A Tape records every differentiable Node in creation order. Creation order is
a topological order of the graph, so the backward sweep walks the tape in
reverse and never needs an explicit sort. Tapes are rebuilt per rollout.
"""
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

ArrayLike = Union[float, int, np.ndarray]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

ACTIVATIONS = ('elu', 'softplus', 'sigmoid', 'relu_pos')


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


class Node:
    """One value in the computation graph."""

    __slots__ = ('value', 'parents', 'backward_fn', 'tape', 'requires_grad', 'name')

    # ndarray <op> Node must defer to the reflected Node operator.
    __array_ufunc__ = None

    def __init__(
        self,
        value: np.ndarray,
        tape: 'Tape',
        parents: Tuple['Node', ...] = (),
        backward_fn: Optional[BackwardFn] = None,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        label = self.name or 'node'
        return f'<Node {label} shape={self.value.shape}>'

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)


class Tape:
    """
    Single-writer recorder for one forward pass.

    With ``record=False`` the tape computes values only; nothing is kept for
    a backward sweep (evaluation mode).
    """

    def __init__(self, record: bool = True):
        self.record = record
        self.nodes: List[Node] = []
        self.leaves: Dict[str, Node] = {}

    def constant(self, value: ArrayLike) -> Node:
        return Node(np.asarray(value, dtype=np.float64), self)

    def variable(self, value: ArrayLike, name: Optional[str] = None) -> Node:
        """Create a differentiable leaf."""
        node = Node(
            np.array(value, dtype=np.float64),
            self,
            requires_grad=self.record,
            name=name,
        )
        if self.record:
            self.nodes.append(node)
            if name is not None:
                self.leaves[name] = node
        return node


def _tape_of(*operands) -> Tape:
    for operand in operands:
        if isinstance(operand, Node):
            return operand.tape
    raise TypeError('at least one operand must be a Node')


def _as_node(value, tape: Tape) -> Node:
    if isinstance(value, Node):
        return value
    return tape.constant(value)


def _make(tape: Tape, value: np.ndarray, parents: Tuple[Node, ...], backward_fn: BackwardFn) -> Node:
    requires = tape.record and any(parent.requires_grad for parent in parents)
    if not requires:
        return Node(value, tape)
    node = Node(value, tape, parents, backward_fn, True)
    tape.nodes.append(node)
    return node


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary_shape(a: Node, b: Node) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f'cannot combine shapes {a.shape} and {b.shape}') from exc


# Elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _as_node(a, tape), _as_node(b, tape)
    _binary_shape(a, b)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(tape, a.value + b.value, (a, b), backward_fn)


def sub(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _as_node(a, tape), _as_node(b, tape)
    _binary_shape(a, b)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(tape, a.value - b.value, (a, b), backward_fn)


def mul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _as_node(a, tape), _as_node(b, tape)
    _binary_shape(a, b)

    def backward_fn(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _make(tape, a.value * b.value, (a, b), backward_fn)


def div(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _as_node(a, tape), _as_node(b, tape)
    _binary_shape(a, b)
    value = a.value / b.value

    def backward_fn(g):
        return (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * value / b.value, b.shape),
        )

    return _make(tape, value, (a, b), backward_fn)


def neg(a: Node) -> Node:
    return _make(a.tape, -a.value, (a,), lambda g: (-g,))


def minimum(a, b) -> Node:
    """Elementwise minimum; ties send the adjoint to ``a``."""
    tape = _tape_of(a, b)
    a, b = _as_node(a, tape), _as_node(b, tape)
    _binary_shape(a, b)
    take_a = a.value <= b.value

    def backward_fn(g):
        return (
            _unbroadcast(np.where(take_a, g, 0.0), a.shape),
            _unbroadcast(np.where(take_a, 0.0, g), b.shape),
        )

    return _make(tape, np.minimum(a.value, b.value), (a, b), backward_fn)


# Reductions and reshaping -------------------------------------------------

def total(x: Node, axis: Optional[int] = None, keepdims: bool = False) -> Node:
    """Sum over ``axis`` (all axes when None)."""
    value = np.sum(x.value, axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _make(x.tape, np.asarray(value, dtype=np.float64), (x,), backward_fn)


def mean(x: Node, axis: Optional[int] = None) -> Node:
    count = x.value.size if axis is None else x.shape[axis]
    return total(x, axis) * (1.0 / count)


def reshape(x: Node, shape: Tuple[int, ...]) -> Node:
    original = x.shape
    return _make(x.tape, x.value.reshape(shape), (x,), lambda g: (g.reshape(original),))


def columns(x: Node, start: int, stop: int) -> Node:
    """Slice ``x[..., start:stop]``."""
    shape = x.shape

    def backward_fn(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return _make(x.tape, x.value[..., start:stop], (x,), backward_fn)


def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    if not nodes:
        raise ShapeError('concat needs at least one operand')
    tape = _tape_of(*nodes)
    nodes = [_as_node(node, tape) for node in nodes]
    try:
        value = np.concatenate([node.value for node in nodes], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    bounds = np.cumsum([node.shape[axis] for node in nodes])[:-1]

    def backward_fn(g):
        return np.split(g, bounds, axis=axis)

    return _make(tape, value, tuple(nodes), backward_fn)


def stack(nodes: Sequence[Node], axis: int = -1) -> Node:
    if not nodes:
        raise ShapeError('stack needs at least one operand')
    tape = _tape_of(*nodes)
    nodes = [_as_node(node, tape) for node in nodes]
    try:
        value = np.stack([node.value for node in nodes], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc

    def backward_fn(g):
        return [np.take(g, i, axis=axis) for i in range(len(nodes))]

    return _make(tape, value, tuple(nodes), backward_fn)


def stop_gradient(x: Node) -> Node:
    return Node(x.value, x.tape)


# Layers -------------------------------------------------------------------

def affine(x: Node, W: Node, b: Optional[Node] = None) -> Node:
    """
    Compute ``x @ W + b``.

    ``x`` may carry any number of leading batch axes; ``W`` is (n, m) and
    ``b`` is (m,).
    """
    tape = _tape_of(x, W)
    x, W = _as_node(x, tape), _as_node(W, tape)
    if W.value.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ShapeError(f'affine: x {x.shape} does not conform with W {W.shape}')
    if b is not None:
        b = _as_node(b, tape)
        if b.shape != (W.shape[1],):
            raise ShapeError(f'affine: bias {b.shape} does not match W {W.shape}')
    value = x.value @ W.value
    if b is not None:
        value = value + b.value
    n, m = W.shape

    def backward_fn(g):
        flat_g = g.reshape(-1, m)
        grads = [g @ W.value.T, x.value.reshape(-1, n).T @ flat_g]
        if b is not None:
            grads.append(flat_g.sum(axis=0))
        return grads

    parents = (x, W) if b is None else (x, W, b)
    return _make(tape, value, parents, backward_fn)


def activation(x: Node, kind: str) -> Node:
    """
    Elementwise activation.

    Kinds: ``elu`` (alpha 1), ``softplus``, ``sigmoid`` and ``relu_pos``
    (the positive part; subgradient 0 at exactly 0).
    """
    v = x.value
    if kind == 'elu':
        value = np.where(v > 0, v, np.expm1(np.minimum(v, 0.0)))
        local = np.where(v > 0, 1.0, value + 1.0)
    elif kind == 'softplus':
        value = np.logaddexp(0.0, v)
        local = expit(v)
    elif kind == 'sigmoid':
        value = expit(v)
        local = value * (1.0 - value)
    elif kind == 'relu_pos':
        value = np.maximum(v, 0.0)
        local = (v > 0).astype(np.float64)
    else:
        raise ValueError(f'unknown activation {kind!r}; expected one of {ACTIVATIONS}')
    return _make(x.tape, value, (x,), lambda g: (g * local,))


def relu_pos(x: Node) -> Node:
    return activation(x, 'relu_pos')


def softmax_with_reserve(x: Node, include_constant: bool) -> Node:
    """
    Softmax over the last axis.

    With ``include_constant`` the denominator carries an extra ``exp(0)``
    term, so outputs sum to less than one and the remainder stays in reserve.
    Max-subtraction keeps every exponent non-positive.
    """
    if x.shape[-1] == 0:
        raise ShapeError('softmax_with_reserve needs a nonempty last axis')
    v = x.value
    shift = np.max(v, axis=-1, keepdims=True)
    if include_constant:
        shift = np.maximum(shift, 0.0)
    e = np.exp(v - shift)
    denom = e.sum(axis=-1, keepdims=True)
    if include_constant:
        denom = denom + np.exp(-shift)
    value = e / denom

    def backward_fn(g):
        return (value * (g - np.sum(g * value, axis=-1, keepdims=True)),)

    return _make(x.tape, value, (x,), backward_fn)


def piecewise_linear(x: Node, knots: np.ndarray, values: Node) -> Node:
    """
    Row-wise linear interpolation through ``(knots, values[row])``.

    ``knots`` is a shared increasing 1-D grid of length n >= 2; ``values`` is
    (B, n) and ``x`` is (B,). Queries outside the grid follow the slope of
    the nearest edge segment.
    """
    tape = _tape_of(x, values)
    x, values = _as_node(x, tape), _as_node(values, tape)
    knots = np.asarray(knots, dtype=np.float64)
    n = knots.size
    if n < 2 or values.shape[-1] != n or values.shape[:-1] != x.shape:
        raise ShapeError(
            f'piecewise_linear: x {x.shape}, knots {knots.shape}, values {values.shape}'
        )
    idx = np.clip(np.searchsorted(knots, x.value, side='right') - 1, 0, n - 2)
    rows = np.arange(x.value.size).reshape(x.shape)
    width = knots[idx + 1] - knots[idx]
    left = values.value[rows, idx]
    right = values.value[rows, idx + 1]
    weight = (x.value - knots[idx]) / width
    slope = (right - left) / width
    value = left + weight * (right - left)

    def backward_fn(g):
        g_values = np.zeros(values.shape)
        g_values[rows, idx] += g * (1.0 - weight)
        g_values[rows, idx + 1] += g * weight
        return g * slope, g_values

    return _make(tape, value, (x, values), backward_fn)


# Backward sweep -----------------------------------------------------------

def gradients(root: Node, leaves: Sequence[Node]) -> List[np.ndarray]:
    """Return d(root)/d(leaf) for each leaf; zeros where no path exists."""
    if root.value.size != 1:
        raise ShapeError(f'backward needs a scalar root, got shape {root.shape}')
    adjoints: Dict[int, np.ndarray] = {}
    if root.requires_grad:
        adjoints[id(root)] = np.ones_like(root.value)
        for node in reversed(root.tape.nodes):
            g = adjoints.get(id(node))
            if g is None or node.backward_fn is None:
                continue
            del adjoints[id(node)]
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                adjoints[key] = pg if key not in adjoints else adjoints[key] + pg
    return [
        np.array(adjoints[id(leaf)], dtype=np.float64).reshape(leaf.shape)
        if id(leaf) in adjoints else np.zeros(leaf.shape)
        for leaf in leaves
    ]


def backward(root: Node, params) -> Dict[str, np.ndarray]:
    """
    Gradient of a scalar ``root`` with respect to every array in ``params``.

    Parameters that were never bound on the root's tape, or that have no
    path to the root, get exact zeros.
    """
    if root.value.size != 1:
        raise ShapeError(f'backward needs a scalar root, got shape {root.shape}')
    bound = [(name, root.tape.leaves.get(name)) for name in params.names]
    present = [leaf for _, leaf in bound if leaf is not None]
    computed = iter(gradients(root, present))
    return {
        name: next(computed) if leaf is not None else np.zeros(params[name].shape)
        for name, leaf in bound
    }
