"""
Hindsight-differentiable inventory dynamics.

Every transition and cost is composed from diffengine ops, so the cost of a
rollout is differentiable in the actions and, through the policy, in the
policy parameters.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from diffengine import Node, Tape, concat, columns, mean, relu_pos, stop_gradient, total
from envsim.models import (
    ActionVector,
    InfeasibleActionError,
    InitialState,
    LocationState,
    Primitives,
    ProblemInstance,
    ScenarioBatch,
    SystemState,
)

logger = logging.getLogger(__name__)

FEASIBILITY_TOLERANCE = 1e-9
INIT_MODES = ('uniform', 'zero')


class LeadTimeQueue:
    """
    Pipeline shift for queues padded to a common number of slots.

    A location with lead time L receives, each period, the entry in slot
    ``slots + 1 - L`` of the queue extended by the new order. When every
    location uses the full queue length the oldest entry simply arrives.
    """

    def __init__(self, lead_times: np.ndarray, slots: int):
        lead_times = np.asarray(lead_times)
        length = slots + 1
        if lead_times.max() > length:
            raise ValueError(f'lead time {lead_times.max()} does not fit {slots} pipeline slots')
        self.length = length
        self.uniform = bool(np.all(lead_times == length))
        arrival_slot = length - lead_times
        self.arrive = [(arrival_slot == j).astype(np.float64) for j in range(length)]
        self.keep = [(j > arrival_slot).astype(np.float64) for j in range(length)]

    def advance(self, pipeline: List[Node], order: Node):
        queue = list(pipeline) + [order]
        if self.uniform:
            return queue[0], queue[1:]
        arrival = None
        for j, slot in enumerate(queue):
            if not self.arrive[j].any():
                continue
            part = slot * self.arrive[j]
            arrival = part if arrival is None else arrival + part
        following = [
            queue[j] if self.keep[j].all() else queue[j] * self.keep[j]
            for j in range(1, self.length)
        ]
        return arrival, following


def _check_nonnegative(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise InfeasibleActionError(f'{what} contains non-finite values')
    worst = values.min() if values.size else 0.0
    if worst < -FEASIBILITY_TOLERANCE:
        raise InfeasibleActionError(f'{what} must be nonnegative (min {worst:.6g})')


def _check_capacity(request: np.ndarray, available: np.ndarray, what: str) -> None:
    slack = available + FEASIBILITY_TOLERANCE * (1.0 + np.abs(available)) - request
    if slack.size and slack.min() < 0:
        raise InfeasibleActionError(f'{what} exceeds available inventory (by {-slack.min():.6g})')


class Dynamics:
    """Per-batch transition function with precomputed lead-time masks."""

    def __init__(
        self,
        instance: ProblemInstance,
        primitives: Primitives,
        slots: int,
        warehouse_slots: int = 0,
        allow_returns: bool = False,
    ):
        if allow_returns and instance.topology != 'single_store':
            raise ValueError('returns are only modeled for single-store instances')
        self.instance = instance
        self.primitives = primitives
        self.allow_returns = allow_returns
        self.queue = LeadTimeQueue(primitives.lead_times, slots)
        self.warehouse_queue = None
        if instance.has_warehouse:
            self.warehouse_queue = LeadTimeQueue(
                np.full((primitives.lead_times.shape[0], 1), instance.warehouse_lead_time),
                warehouse_slots,
            )

    def step(
        self,
        state: SystemState,
        action: ActionVector,
        demand: np.ndarray,
        ledger: Optional[Dict[str, list]] = None,
    ):
        """Advance one period; returns (next state, per-scenario period cost)."""
        if self.instance.topology == 'serial':
            return self._serial_step(state, action, demand, ledger)
        return self._store_step(state, action, demand, ledger)

    def _store_step(self, state, action, demand, ledger):
        instance, prims = self.instance, self.primitives
        stores = state.stores
        orders = action.orders
        on_hand = stores.on_hand

        if self.allow_returns:
            returned = np.minimum(orders.value, 0.0)
            _check_capacity(-returned, np.maximum(on_hand.value, 0.0), 'returned quantity')
            shipped = relu_pos(orders)
            on_hand = on_hand - relu_pos(-orders)
        else:
            _check_nonnegative(orders.value, 'store orders')
            shipped = orders

        cost = None
        warehouse = None
        if instance.has_warehouse:
            w = state.warehouse
            w_order = action.warehouse_order
            if w_order is None:
                raise InfeasibleActionError('warehouse topologies need a warehouse order')
            _check_nonnegative(w_order.value, 'warehouse order')
            allocated = total(orders, axis=1, keepdims=True)
            _check_capacity(allocated.value, w.on_hand.value, 'store allocations')
            left = w.on_hand - allocated
            cost = total(left * instance.warehouse_holding, axis=1)
            if instance.procurement_cost:
                cost = cost + total(w_order * instance.procurement_cost, axis=1)
            w_arrival, w_pipeline = self.warehouse_queue.advance(w.pipeline, w_order)
            warehouse = LocationState(on_hand=left + w_arrival, pipeline=w_pipeline)

        arrival, pipeline = self.queue.advance(stores.pipeline, shipped)
        shortfall = relu_pos(demand - on_hand)
        excess = relu_pos(on_hand - demand)
        store_cost = total(shortfall * prims.underage + excess * prims.holding, axis=1)
        cost = store_cost if cost is None else cost + store_cost

        if instance.mode == 'backlogged':
            next_on_hand = on_hand - demand + arrival
        else:
            next_on_hand = excess + arrival

        if ledger is not None:
            sales = np.minimum(demand, np.maximum(on_hand.value, 0.0))
            ledger['on_hand'].append(on_hand.value.copy())
            ledger['position'].append(stores.inventory_position())
            ledger['orders'].append(orders.value.copy())
            ledger['demand'].append(np.array(demand, dtype=np.float64))
            ledger['sales'].append(sales)
            ledger['revenue'].append(sales * prims.underage)
            ledger['holding_cost'].append(excess.value * prims.holding)
            ledger['underage_cost'].append(shortfall.value * prims.underage)

        window = stores.window
        if window is not None:
            window = np.concatenate([window[..., 1:], np.asarray(demand)[..., None]], axis=-1)
        next_stores = LocationState(on_hand=next_on_hand, pipeline=pipeline, window=window)
        return SystemState(stores=next_stores, warehouse=warehouse, period=state.period + 1), cost

    def _serial_step(self, state, action, demand, ledger):
        prims = self.primitives
        stores = state.stores
        orders = action.orders
        on_hand = stores.on_hand
        echelons = on_hand.shape[1]
        _check_nonnegative(orders.value, 'serial orders')
        if echelons > 1:
            _check_capacity(orders.value[:, 1:], on_hand.value[:, :-1], 'echelon transfers')

        # Location k ships a^{k+1} downstream; the store ships to customers.
        store_on_hand = columns(on_hand, echelons - 1, echelons)
        store_demand = np.asarray(demand).reshape(-1, 1)
        shortfall = relu_pos(store_demand - store_on_hand)
        excess = relu_pos(store_on_hand - store_demand)
        store_cost = (
            shortfall * prims.underage[:, :1]
            + excess * prims.holding[:, echelons - 1:]
        )
        cost = total(store_cost, axis=1)
        if echelons > 1:
            transfers = columns(orders, 1, echelons)
            upstream_left = columns(on_hand, 0, echelons - 1) - transfers
            cost = cost + total(upstream_left * prims.holding[:, :echelons - 1], axis=1)
            outflow = concat([transfers, store_demand], axis=1)
        else:
            outflow = store_demand

        arrival, pipeline = self.queue.advance(stores.pipeline, orders)
        next_on_hand = on_hand - outflow + arrival

        if ledger is not None:
            ledger['on_hand'].append(on_hand.value.copy())
            ledger['position'].append(stores.inventory_position())
            ledger['orders'].append(orders.value.copy())
            ledger['demand'].append(store_demand.copy())
            ledger['sales'].append(np.minimum(store_demand, np.maximum(store_on_hand.value, 0.0)))
            ledger['revenue'].append(ledger['sales'][-1] * prims.underage[:, :1])
            ledger['holding_cost'].append(excess.value * prims.holding[:, echelons - 1:])
            ledger['underage_cost'].append(shortfall.value * prims.underage[:, :1])

        next_stores = LocationState(on_hand=next_on_hand, pipeline=pipeline)
        return SystemState(stores=next_stores, period=state.period + 1), cost


def build_state(tape: Tape, initial: InitialState) -> SystemState:
    """Lift an array snapshot onto ``tape`` as constants."""
    stores = LocationState(
        on_hand=tape.constant(initial.on_hand),
        pipeline=[tape.constant(initial.pipeline[:, :, j]) for j in range(initial.pipeline.shape[2])],
        window=None if initial.window is None else np.array(initial.window, dtype=np.float64),
    )
    warehouse = None
    if initial.warehouse_on_hand is not None:
        w_pipe = initial.warehouse_pipeline
        warehouse = LocationState(
            on_hand=tape.constant(initial.warehouse_on_hand),
            pipeline=[tape.constant(w_pipe[:, :, j]) for j in range(w_pipe.shape[2])],
        )
    return SystemState(stores=stores, warehouse=warehouse)


def step(
    state: SystemState,
    action: ActionVector,
    demand: np.ndarray,
    instance: ProblemInstance,
    primitives: Optional[Primitives] = None,
):
    """
    One transition of the environment.

    Args:
        state: current batched state
        action: feasible action (the simulator never clips)
        demand: (H, K) realized demand
        instance: problem definition
        primitives: per-scenario overrides; defaults to the instance values

    Returns:
        tuple: (next SystemState, per-scenario period cost Node of shape (H,))
    """
    rows = state.stores.on_hand.shape[0]
    if primitives is None:
        primitives = Primitives(
            underage=np.tile(instance.underage, (rows, 1)),
            holding=np.tile(instance.holding, (rows, 1)),
            lead_times=np.tile(instance.lead_times, (rows, 1)),
        )
    warehouse_slots = len(state.warehouse.pipeline) if state.warehouse is not None else 0
    dynamics = Dynamics(instance, primitives, len(state.stores.pipeline), warehouse_slots)
    return dynamics.step(state, action, demand)


def initialize(
    instance: ProblemInstance,
    mode: str,
    sample_mean,
    rng: np.random.Generator,
    count: int,
    lead_times: Optional[np.ndarray] = None,
) -> InitialState:
    """
    Draw ``count`` initial states.

    Uniform mode samples on-hand and every active pipeline slot i.i.d. from
    Uniform(0, mean); zero mode starts empty. The warehouse always starts
    empty.
    """
    if mode not in INIT_MODES:
        raise ValueError(f'initialization mode must be one of {INIT_MODES}, got {mode!r}')
    width = instance.location_count
    if lead_times is None:
        lead_times = np.tile(instance.lead_times, (count, 1))
    lead_times = np.asarray(lead_times, dtype=np.int64).reshape(count, width)
    slots = int(lead_times.max()) - 1
    mu = np.asarray(sample_mean, dtype=np.float64)
    if mu.size == 1:
        mu = np.full(width, float(mu.reshape(-1)[0]))
    mu = np.broadcast_to(mu, (count, width))
    if np.any(mu < 0):
        raise ValueError('sample means must be nonnegative')

    active = np.arange(slots)[None, None, :] >= (slots - (lead_times - 1))[:, :, None]
    if mode == 'zero':
        on_hand = np.zeros((count, width))
        pipeline = np.zeros((count, width, slots))
    else:
        on_hand = rng.uniform(0.0, 1.0, size=(count, width)) * mu
        pipeline = rng.uniform(0.0, 1.0, size=(count, width, slots)) * mu[:, :, None] * active

    initial = InitialState(on_hand=on_hand, pipeline=pipeline)
    if instance.has_warehouse:
        initial.warehouse_on_hand = np.zeros((count, 1))
        initial.warehouse_pipeline = np.zeros((count, 1, instance.warehouse_lead_time - 1))
    return initial


@dataclass
class PeriodContext:
    """What a policy may read besides the state in one period."""

    instance: ProblemInstance
    primitives: Primitives
    batch: ScenarioBatch
    period: int

    def covariates(self) -> Optional[np.ndarray]:
        if self.batch.covariates is None:
            return None
        return self.batch.covariates[:, self.period]

    def future_demand(self, offset: int) -> np.ndarray:
        """Demand ``offset`` periods ahead; only oracle policies call this."""
        t = self.period + offset
        if t >= self.batch.horizon:
            raise IndexError(
                f'future demand at period {t} is beyond the trace end ({self.batch.horizon})'
            )
        return self.batch.demand[:, t]


@dataclass
class RolloutResult:
    total_cost: Node
    loss: Node
    per_scenario: np.ndarray
    mean_cost: float
    ledger: Optional[Dict[str, np.ndarray]] = None


LEDGER_KEYS = ('on_hand', 'position', 'orders', 'demand', 'sales', 'revenue', 'holding_cost', 'underage_cost')


def rollout(
    policy,
    batch: ScenarioBatch,
    instance: ProblemInstance,
    horizon: Optional[int] = None,
    burn_in: int = 0,
    tape: Optional[Tape] = None,
    round_actions: bool = False,
    allow_returns: bool = False,
    detach_periods: int = 0,
    record: bool = False,
) -> RolloutResult:
    """
    Simulate ``policy`` on every scenario of ``batch``.

    Costs of periods ``burn_in``.. ``horizon - 1`` (0-based) are accumulated;
    ``mean_cost`` is the average cost per store-period over scenarios.
    Actions of the first ``detach_periods`` periods carry no gradient.
    """
    horizon = batch.horizon if horizon is None else horizon
    if horizon > batch.horizon:
        raise ValueError(f'horizon {horizon} exceeds trace length {batch.horizon}')
    if not 0 <= burn_in < horizon:
        raise ValueError(f'burn_in must lie in [0, {horizon}), got {burn_in}')
    if round_actions and instance.topology != 'single_store':
        raise ValueError('action rounding is only defined for single-store instances')

    tape = tape if tape is not None else Tape(record=True)
    weights = policy.params.bind(tape)
    prims = batch.primitives(instance)
    initial = batch.initial
    warehouse_slots = 0 if initial.warehouse_pipeline is None else initial.warehouse_pipeline.shape[2]
    dynamics = Dynamics(instance, prims, initial.pipeline.shape[2], warehouse_slots, allow_returns)
    state = build_state(tape, initial)
    ledger = {key: [] for key in LEDGER_KEYS} if record else None

    accrued = None
    for t in range(horizon):
        context = PeriodContext(instance, prims, batch, t)
        action = policy.act(tape, weights, state, context)
        if t < detach_periods:
            action = ActionVector(
                orders=stop_gradient(action.orders),
                warehouse_order=None if action.warehouse_order is None else stop_gradient(action.warehouse_order),
            )
        if round_actions:
            action = ActionVector(orders=tape.constant(np.rint(action.orders.value)))
        state, cost = dynamics.step(state, action, batch.demand[:, t], ledger)
        if t >= burn_in:
            accrued = cost if accrued is None else accrued + cost

    scale = 1.0 / ((horizon - burn_in) * instance.store_count)
    per_scenario = accrued * scale
    loss = mean(per_scenario)
    stacked = None
    if ledger is not None:
        stacked = {key: np.stack(values, axis=1) for key, values in ledger.items()}
    return RolloutResult(
        total_cost=accrued,
        loss=loss,
        per_scenario=np.array(per_scenario.value, dtype=np.float64),
        mean_cost=float(loss.value),
        ledger=stacked,
    )


def scenario_losses(policy, batch: ScenarioBatch, instance: ProblemInstance, horizon: int, burn_in: int) -> np.ndarray:
    """Per-scenario cost per store-period without gradient recording."""
    return rollout(policy, batch, instance, horizon, burn_in, tape=Tape(record=False)).per_scenario


def location_means(batch_demand: np.ndarray) -> np.ndarray:
    """Sample mean demand per store over all scenarios and periods."""
    return np.asarray(batch_demand, dtype=np.float64).mean(axis=(0, 1))


def order_cap(instance: ProblemInstance, store_means: Sequence[float]) -> float:
    """
    Crude upper bound M on upstream orders: four times the mean cumulative
    demand over the upstream lead time, summed over stores.
    """
    lead = instance.warehouse_lead_time if instance.has_warehouse else int(instance.lead_times[0])
    return 4.0 * max(lead, 1) * float(np.sum(store_means))
