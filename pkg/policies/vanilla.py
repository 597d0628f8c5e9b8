"""
Vanilla NN: one MLP from the concatenated raw state to every head.
"""
from typing import Dict, Optional, Sequence

import numpy as np

from diffengine import Node, ParamSet, Tape, activation, columns
from envsim.models import ActionVector, ProblemInstance, SystemState
from envsim.simulator import PeriodContext, order_cap
from policies.base import Policy, StateLayout, feature_width, raw_features
from policies.feasibility import enforce
from policies.networks import MLP

DEFAULT_FEASIBILITY = {
    'warehouse_stores': 'softmax',
    'transshipment': 'softmax_no_constant',
}


class VanillaPolicy(Policy):
    """
    Fully connected policy over the raw state.

    Single-store instances read the order from a softplus head shifted by
    +1. Warehouse instances emit a warehouse order ``sigmoid(head) * M`` and
    store intermediates passed through the feasibility enforcement function.
    """

    architecture = 'vanilla'

    def __init__(
        self,
        instance: ProblemInstance,
        layout: StateLayout,
        store_means: Sequence[float],
        rng: np.random.Generator,
        hidden: Sequence[int] = (32, 32, 32),
        feasibility: Optional[str] = None,
        include_primitives: bool = False,
        include_window: bool = False,
        include_covariates: bool = False,
    ):
        self.instance = instance
        self.layout = layout
        self.store_means = np.asarray(store_means, dtype=np.float64)
        self.max_order = order_cap(instance, self.store_means)
        self.feasibility = feasibility or DEFAULT_FEASIBILITY.get(instance.topology)
        self.include_primitives = include_primitives
        self.include_window = include_window
        self.include_covariates = include_covariates
        width = feature_width(
            instance,
            layout.slots,
            layout.warehouse_slots,
            layout.window if include_window else 0,
            include_primitives,
            layout.max_lead,
            layout.covariates if include_covariates else 0,
        )
        heads = instance.location_count + (1 if instance.has_warehouse else 0)
        self.network = MLP('vanilla', [('state', width)], hidden, heads)
        super().__init__(ParamSet(self.network.initial_arrays(rng)))

    def features(self, tape: Tape, state: SystemState, context: PeriodContext) -> Node:
        return raw_features(
            tape,
            state,
            context,
            include_primitives=self.include_primitives,
            include_window=self.include_window,
            include_covariates=self.include_covariates,
            max_lead=self.layout.max_lead,
        )

    def act(self, tape: Tape, weights: Dict[str, Node], state: SystemState, context: PeriodContext) -> ActionVector:
        out = self.network.forward(weights, {'state': self.features(tape, state, context)})
        if not self.instance.has_warehouse:
            return ActionVector(orders=activation(out + 1.0, 'softplus'))
        warehouse_order = activation(columns(out, 0, 1), 'sigmoid') * self.max_order
        intermediate = columns(out, 1, out.shape[1])
        allocation = enforce(self.feasibility, state.warehouse.on_hand, intermediate)
        return ActionVector(orders=allocation, warehouse_order=warehouse_order)

    def describe(self) -> dict:
        info = super().describe()
        info.update({'hidden': self.network.hidden, 'feasibility': self.feasibility, 'max_order': self.max_order})
        return info
