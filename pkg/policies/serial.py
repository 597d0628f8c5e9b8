"""
Gated MLP for serial lines: the upstream order is capped by M, every
downstream transfer is a sigmoid share of the parent's on-hand inventory.
"""
from typing import Dict

from diffengine import Node, Tape, activation, columns, concat
from envsim.models import ActionVector, SystemState
from envsim.simulator import PeriodContext
from policies.feasibility import enforce
from policies.vanilla import VanillaPolicy


class SerialPolicy(VanillaPolicy):
    architecture = 'serial'

    def act(self, tape: Tape, weights: Dict[str, Node], state: SystemState, context: PeriodContext) -> ActionVector:
        if self.instance.topology != 'serial':
            raise ValueError('SerialPolicy needs a serial instance')
        out = self.network.forward(weights, {'state': self.features(tape, state, context)})
        echelons = out.shape[1]
        first = activation(columns(out, 0, 1), 'sigmoid') * self.max_order
        if echelons == 1:
            return ActionVector(orders=first)
        upstream = columns(state.stores.on_hand, 0, echelons - 1)
        transfers = enforce('serial_sigmoid', upstream, columns(out, 1, echelons))
        return ActionVector(orders=concat([first, transfers], axis=1))
