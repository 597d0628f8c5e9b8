"""
Generalized newsvendor policies and the data-driven vanilla policy for
single-store problems with a demand forecast window.
"""
from typing import Dict, Optional, Sequence

import numpy as np

from diffengine import Node, ParamSet, Tape, activation, concat, piecewise_linear, relu_pos, reshape
from envsim.models import ActionVector, SystemState
from envsim.simulator import PeriodContext
from nvsuite.forecaster import DAYS_SCALE, SCALE_FLOOR, QuantileForecaster
from policies.base import Policy, lead_time_one_hot
from policies.networks import MLP

GN_KINDS = ('newsvendor', 'fixed_quantile', 'transformed_newsvendor', 'returns_newsvendor', 'just_in_time')
TRAINABLE_KINDS = ('fixed_quantile', 'transformed_newsvendor')


def critical_ratio(underage, holding) -> np.ndarray:
    underage = np.asarray(underage, dtype=np.float64)
    holding = np.asarray(holding, dtype=np.float64)
    return underage / (underage + holding)


def _window_and_days(state: SystemState, context: PeriodContext):
    window = state.stores.window
    if window is None:
        raise ValueError('forecast-based policies need a demand window in the state')
    rows = window.shape[0]
    covariates = context.covariates()
    days = None if covariates is None else np.asarray(covariates).reshape(rows, -1)[:, 0]
    return window.reshape(rows, -1), days


class GNPolicy(Policy):
    """
    Order up to a quantile of forecast lead-time demand.

    The target is the tau-quantile of demand over the next L + 1 periods
    read from the frozen forecaster; the order is the gap between target
    and inventory position, floored at zero except for
    ``returns_newsvendor``, whose negative orders are returns capped at the
    on-hand stock. ``just_in_time`` ignores the forecast and orders exactly
    the demand that its order will meet.
    """

    architecture = 'generalized_newsvendor'

    def __init__(
        self,
        kind: str,
        forecaster: Optional[QuantileForecaster] = None,
        rng: Optional[np.random.Generator] = None,
        initial_tau: float = 0.5,
        hidden: Sequence[int] = (16, 16),
    ):
        if kind not in GN_KINDS:
            raise ValueError(f'unknown policy kind {kind!r}; expected one of {GN_KINDS}')
        if kind != 'just_in_time' and forecaster is None:
            raise ValueError(f'{kind} needs a forecaster')
        self.kind = kind
        self.forecaster = forecaster
        self.transform = None
        arrays = {}
        if kind == 'fixed_quantile':
            arrays['gn.tau'] = np.array([initial_tau], dtype=np.float64)
        elif kind == 'transformed_newsvendor':
            self.transform = MLP('gn.transform', [('tau', 1)], hidden, 1)
            arrays = self.transform.initial_arrays(rng or np.random.default_rng(0))
            last = len(self.transform.hidden)
            arrays[f'gn.transform.w{last}'] = np.zeros_like(arrays[f'gn.transform.w{last}'])
            arrays[f'gn.transform.b{last}'] = np.zeros_like(arrays[f'gn.transform.b{last}'])
        super().__init__(ParamSet(arrays))

    @property
    def admissible(self) -> bool:
        return self.kind != 'returns_newsvendor'

    @property
    def oracle(self) -> bool:
        return self.kind == 'just_in_time'

    def quantile_level(self, tape: Tape, weights: Dict[str, Node], context: PeriodContext) -> Node:
        """Per-scenario tau of shape (H,)."""
        prims = context.primitives
        newsvendor = critical_ratio(prims.underage[:, 0], prims.holding[:, 0])
        if self.kind == 'fixed_quantile':
            return tape.constant(np.zeros_like(newsvendor)) + weights['gn.tau']
        if self.kind == 'transformed_newsvendor':
            shift = self.transform.forward(weights, {'tau': tape.constant(newsvendor[:, None])})
            return reshape(shift, newsvendor.shape) + newsvendor
        return tape.constant(newsvendor)

    def forecast_rows(self, state: SystemState, context: PeriodContext) -> np.ndarray:
        """(H, Q) quantile row of the (L + 1)-period demand sum for every scenario."""
        windows, days = _window_and_days(state, context)
        grid = self.forecaster.predict(windows, days)
        index = self.forecaster.horizon_index(context.primitives.lead_times[:, 0])
        return grid[np.arange(grid.shape[0]), :, index]

    def act(self, tape: Tape, weights: Dict[str, Node], state: SystemState, context: PeriodContext) -> ActionVector:
        if context.instance.topology != 'single_store':
            raise ValueError('generalized newsvendor policies are single-store policies')
        if self.kind == 'just_in_time':
            return ActionVector(orders=tape.constant(self.future_orders(context)))
        stores = state.stores
        rows = stores.on_hand.shape[0]
        position = stores.on_hand
        for slot in stores.pipeline:
            position = position + slot
        tau = self.quantile_level(tape, weights, context)
        target = piecewise_linear(
            tau, np.asarray(self.forecaster.quantiles), tape.constant(self.forecast_rows(state, context)),
        )
        gap = reshape(target, (rows, 1)) - position
        if self.kind == 'returns_newsvendor':
            floor = -relu_pos(stores.on_hand)
            return ActionVector(orders=floor + relu_pos(gap - floor))
        return ActionVector(orders=relu_pos(gap))

    @staticmethod
    def future_orders(context: PeriodContext) -> np.ndarray:
        """Demand L periods ahead for every scenario; IndexError past the trace end."""
        lead = context.primitives.lead_times[:, 0]
        orders = np.zeros((lead.size, 1))
        for value in np.unique(lead):
            rows = lead == value
            orders[rows, 0] = context.future_demand(int(value))[rows, 0]
        return orders

    def describe(self) -> dict:
        info = super().describe()
        info['kind'] = self.kind
        if self.kind == 'fixed_quantile':
            info['tau'] = float(self.params['gn.tau'][0])
        return info


def gn_policy_step(policy: GNPolicy, state: SystemState, context: PeriodContext) -> np.ndarray:
    """Orders of ``policy`` for one period, evaluated without gradients."""
    tape = Tape(record=False)
    return policy.act(tape, policy.params.bind(tape), state, context).orders.value


class DataDrivenPolicy(Policy):
    """
    Vanilla MLP over the scaled raw state of a single store with a demand
    window: on-hand, pipeline and window divided by the window mean, the log
    of that mean, p, h, the lead-time one-hot and the anchor days. The order
    is softplus(head + 1) times the scale.
    """

    architecture = 'vanilla_data_driven'

    def __init__(
        self,
        window: int,
        slots: int,
        max_lead: int,
        rng: np.random.Generator,
        hidden: Sequence[int] = (128, 128),
    ):
        self.window = int(window)
        self.slots = int(slots)
        self.max_lead = int(max_lead)
        width = 1 + self.slots + self.window + 1 + 2 + self.max_lead + 1
        self.network = MLP('vanilla', [('state', width)], hidden, 1)
        super().__init__(ParamSet(self.network.initial_arrays(rng)))

    def features(self, tape: Tape, state: SystemState, context: PeriodContext):
        windows, days = _window_and_days(state, context)
        rows = windows.shape[0]
        scale = np.maximum(windows.mean(axis=1, keepdims=True), SCALE_FLOOR)
        prims = context.primitives
        if days is None:
            days = np.zeros(rows)
        parts = [state.stores.on_hand] + list(state.stores.pipeline)
        parts = [part / scale for part in parts]
        parts += [
            tape.constant(windows / scale),
            tape.constant(np.log1p(scale)),
            tape.constant(prims.underage[:, :1]),
            tape.constant(prims.holding[:, :1]),
            tape.constant(lead_time_one_hot(prims.lead_times[:, :1], self.max_lead)),
            tape.constant(days[:, None] / DAYS_SCALE),
        ]
        return concat(parts, axis=1), scale

    def act(self, tape: Tape, weights: Dict[str, Node], state: SystemState, context: PeriodContext) -> ActionVector:
        inputs, scale = self.features(tape, state, context)
        out = self.network.forward(weights, {'state': inputs})
        return ActionVector(orders=activation(out + 1.0, 'softplus') * scale)

    def describe(self) -> dict:
        info = super().describe()
        info.update({'hidden': self.network.hidden, 'window': self.window})
        return info
