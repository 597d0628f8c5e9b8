"""
Symmetry-aware policy: a context network summarizes the system, a warehouse
network places the warehouse order, and one store network, shared by every
store, emits the intermediate outputs that proportional allocation turns
into feasible store allocations.
"""
from typing import Dict, Sequence

import numpy as np

from diffengine import Node, ParamSet, Tape, activation, concat, mean, reshape, stack
from envsim.models import ActionVector, ProblemInstance, SystemState
from envsim.simulator import PeriodContext, order_cap
from policies.base import Policy, StateLayout
from policies.feasibility import enforce
from policies.networks import MLP, merge_arrays

# p, h, lead time, demand mean, demand coefficient of variation
PRIMITIVE_FEATURES = 5


class SymmetryAwarePolicy(Policy):
    """
    Weight-shared per-store policy with an optional d-dimensional context.

    The context network reads the store states mean-pooled across stores plus
    the warehouse state, so the whole policy is permutation-equivariant in
    the stores and can be evaluated for any number of stores.
    """

    architecture = 'symmetry_aware'

    def __init__(
        self,
        instance: ProblemInstance,
        layout: StateLayout,
        store_means: Sequence[float],
        store_cvs: Sequence[float],
        rng: np.random.Generator,
        context_dim: int = 256,
        context_hidden: Sequence[int] = (256,),
        warehouse_hidden: Sequence[int] = (16, 16),
        store_hidden: Sequence[int] = (32, 32),
    ):
        if not instance.has_warehouse:
            raise ValueError('the symmetry-aware policy needs a warehouse topology')
        self.instance = instance
        self.layout = layout
        self.store_means = np.asarray(store_means, dtype=np.float64)
        self.store_cvs = np.asarray(store_cvs, dtype=np.float64)
        self.max_order = order_cap(instance, self.store_means)
        self.context_dim = int(context_dim)
        local = 1 + layout.slots + PRIMITIVE_FEATURES
        warehouse = 1 + layout.warehouse_slots
        parts = []
        self.context_net = None
        if self.context_dim > 0:
            self.context_net = MLP('context', [('stores', local), ('warehouse', warehouse)], context_hidden, self.context_dim)
            parts.append(self.context_net.initial_arrays(rng))
        self.warehouse_net = MLP('warehouse', [('warehouse', warehouse), ('context', self.context_dim)], warehouse_hidden, 1)
        self.store_net = MLP('store', [('local', local), ('context', self.context_dim)], store_hidden, 1)
        parts.append(self.warehouse_net.initial_arrays(rng))
        parts.append(self.store_net.initial_arrays(rng))
        super().__init__(ParamSet(merge_arrays(*parts)))

    def store_inputs(self, tape: Tape, state: SystemState, context: PeriodContext) -> Node:
        """(H, K, f) local state and primitives of every store."""
        rows, stores = state.stores.on_hand.shape
        prims = context.primitives
        shape = (rows, stores)
        constants = [
            prims.underage,
            prims.holding,
            prims.lead_times.astype(np.float64),
            np.broadcast_to(self.store_means, shape),
            np.broadcast_to(self.store_cvs, shape),
        ]
        blocks = [state.stores.on_hand] + list(state.stores.pipeline)
        blocks += [tape.constant(np.broadcast_to(c, shape)) for c in constants]
        return stack(blocks, axis=-1)

    def act(self, tape: Tape, weights: Dict[str, Node], state: SystemState, context: PeriodContext) -> ActionVector:
        rows, stores = state.stores.on_hand.shape
        local = self.store_inputs(tape, state, context)
        warehouse = concat([state.warehouse.on_hand] + list(state.warehouse.pipeline), axis=1)

        inputs = {'warehouse': warehouse, 'local': local}
        if self.context_net is not None:
            pooled = mean(local, axis=1)
            summary = self.context_net.forward(weights, {'stores': pooled, 'warehouse': warehouse})
            summary = activation(summary, 'sigmoid')
            inputs['context'] = summary
        warehouse_out = self.warehouse_net.forward(weights, inputs)
        warehouse_order = activation(warehouse_out, 'sigmoid') * self.max_order

        if self.context_net is not None:
            inputs = dict(inputs, context=reshape(inputs['context'], (rows, 1, self.context_dim)))
        intermediate = reshape(self.store_net.forward(weights, inputs), (rows, stores))
        allocation = enforce('proportional', state.warehouse.on_hand, intermediate)
        return ActionVector(orders=allocation, warehouse_order=warehouse_order)

    def describe(self) -> dict:
        info = super().describe()
        info.update({'context_dim': self.context_dim, 'max_order': self.max_order})
        return info
