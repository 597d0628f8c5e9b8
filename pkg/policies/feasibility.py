"""
Feasibility enforcement: differentiable maps from unconstrained network
outputs to allocations that never exceed the inventory available upstream.
"""
from diffengine import Node, activation, minimum, relu_pos, softmax_with_reserve, total

FEASIBILITY_KINDS = ('proportional', 'softmax', 'softmax_no_constant', 'serial_sigmoid')


def enforce(kind: str, available: Node, intermediate: Node) -> Node:
    """
    Turn intermediate outputs ``b`` (H, K) into a feasible allocation.

    Args:
        kind: one of FEASIBILITY_KINDS
        available: upstream inventory, (H, 1) for a shared warehouse or
            (H, K) per-column for ``serial_sigmoid``
        intermediate: unconstrained outputs b

    Returns:
        Node: allocation a with a >= 0 and sum(a) <= available
    """
    if kind == 'proportional':
        tentative = relu_pos(intermediate)
        requested = total(tentative, axis=1, keepdims=True)
        # Nothing requested: divide by 1 instead; the allocation is 0 anyway
        # and relu_pos already zeroes the gradient.
        safe = requested + (requested.value == 0.0).astype(float)
        scale = minimum(available / safe, 1.0)
        return tentative * scale
    if kind == 'softmax':
        return softmax_with_reserve(intermediate, include_constant=True) * available
    if kind == 'softmax_no_constant':
        return softmax_with_reserve(intermediate, include_constant=False) * available
    if kind == 'serial_sigmoid':
        return activation(intermediate, 'sigmoid') * available
    raise ValueError(f'unknown feasibility kind {kind!r}; expected one of {FEASIBILITY_KINDS}')
