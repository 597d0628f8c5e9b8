"""
Domain types for the inventory environment.

Everything is batched: a ScenarioBatch of H scenarios is simulated as one
matrix program whose rows are scenarios. A location group (all stores, or
all echelons of a serial line) is held column-wise.
"""
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from diffengine import Node

TOPOLOGIES = ('single_store', 'warehouse_stores', 'transshipment', 'serial')
MODES = ('backlogged', 'lost')


class InfeasibleActionError(ValueError):
    """An action violated nonnegativity or an inventory availability limit."""


@dataclass(frozen=True)
class ProblemInstance:
    """
    Network topology, cost rates, lead times and unmet-demand mode.

    For the serial topology ``holding`` and ``lead_times`` run over the
    echelons (upstream first) and ``underage`` has a single entry for the
    downstream store.
    """

    topology: str
    mode: str
    underage: np.ndarray
    holding: np.ndarray
    lead_times: np.ndarray
    warehouse_holding: float = 0.0
    warehouse_lead_time: int = 0
    procurement_cost: float = 0.0
    allow_negative_demand: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'underage', np.atleast_1d(np.asarray(self.underage, dtype=np.float64)))
        object.__setattr__(self, 'holding', np.atleast_1d(np.asarray(self.holding, dtype=np.float64)))
        object.__setattr__(self, 'lead_times', np.atleast_1d(np.asarray(self.lead_times, dtype=np.int64)))
        self.validate()

    def validate(self) -> None:
        if self.topology not in TOPOLOGIES:
            raise ValueError(f'topology must be one of {TOPOLOGIES}, got {self.topology!r}')
        if self.mode not in MODES:
            raise ValueError(f'mode must be one of {MODES}, got {self.mode!r}')
        if self.holding.shape != self.lead_times.shape:
            raise ValueError('holding and lead_times must have one entry per location')
        if self.topology == 'serial':
            if self.underage.shape != (1,):
                raise ValueError('serial instances take a single store underage cost')
            if self.mode != 'backlogged':
                raise ValueError('serial instances are backlogged')
        elif self.underage.shape != self.holding.shape:
            raise ValueError('underage and holding must have one entry per store')
        if self.topology == 'single_store' and self.store_count != 1:
            raise ValueError('single_store instances have exactly one store')
        if min(self.underage.min(), self.holding.min(), self.warehouse_holding, self.procurement_cost) < 0:
            raise ValueError('costs must be nonnegative')
        if self.lead_times.min() < 1:
            raise ValueError('lead times must be at least 1 period')
        if self.has_warehouse:
            if self.warehouse_lead_time < 1:
                raise ValueError('warehouse lead time must be at least 1 period')
            if self.warehouse_holding >= self.holding.min():
                raise ValueError('warehouse holding cost must be below every store holding cost')

    @property
    def has_warehouse(self) -> bool:
        return self.topology in ('warehouse_stores', 'transshipment')

    @property
    def store_count(self) -> int:
        """Number of demand-facing stores (1 for a serial line)."""
        return 1 if self.topology == 'serial' else int(self.underage.size)

    @property
    def location_count(self) -> int:
        """Columns of the location group: stores, or echelons for serial."""
        return int(self.holding.size)

    def to_dict(self) -> dict:
        return {
            'topology': self.topology,
            'mode': self.mode,
            'underage': self.underage.tolist(),
            'holding': self.holding.tolist(),
            'lead_times': self.lead_times.tolist(),
            'warehouse_holding': float(self.warehouse_holding),
            'warehouse_lead_time': int(self.warehouse_lead_time),
            'procurement_cost': float(self.procurement_cost),
            'allow_negative_demand': bool(self.allow_negative_demand),
        }


@dataclass
class InitialState:
    """
    Array snapshot of a batch of system states.

    Pipelines are padded to the longest lead time minus one; a location with
    lead time L keeps its L-1 in-transit entries in the last L-1 slots, and
    the leading padding slots stay at zero.
    """

    on_hand: np.ndarray
    pipeline: np.ndarray
    warehouse_on_hand: Optional[np.ndarray] = None
    warehouse_pipeline: Optional[np.ndarray] = None
    window: Optional[np.ndarray] = None

    def subset(self, index) -> 'InitialState':
        def pick(a):
            return None if a is None else a[index]
        return InitialState(
            on_hand=self.on_hand[index],
            pipeline=self.pipeline[index],
            warehouse_on_hand=pick(self.warehouse_on_hand),
            warehouse_pipeline=pick(self.warehouse_pipeline),
            window=pick(self.window),
        )


@dataclass
class LocationState:
    """On-hand, in-transit queue (oldest first) and forecast window of one location group."""

    on_hand: Node
    pipeline: List[Node]
    window: Optional[np.ndarray] = None

    def inventory_position(self) -> np.ndarray:
        position = self.on_hand.value.copy()
        for slot in self.pipeline:
            position = position + slot.value
        return position


@dataclass
class SystemState:
    stores: LocationState
    warehouse: Optional[LocationState] = None
    period: int = 0


@dataclass
class ActionVector:
    """
    Orders for the location group (store allocations, or serial echelon
    orders/transfers) and the warehouse order where a warehouse exists.
    """

    orders: Node
    warehouse_order: Optional[Node] = None


@dataclass
class Primitives:
    """Per-scenario cost rates and lead times resolved for one batch."""

    underage: np.ndarray
    holding: np.ndarray
    lead_times: np.ndarray

    @property
    def max_lead_time(self) -> int:
        return int(self.lead_times.max())


@dataclass
class ScenarioBatch:
    """
    H scenarios: initial states, a T-period demand trace per scenario, and
    optional per-scenario overrides of underage cost and lead time.

    ``demand`` is (H, T, K); ``covariates`` (H, T, c) carries exogenous
    per-period features such as days until the seasonal anchor.
    """

    demand: np.ndarray
    initial: InitialState
    underage: Optional[np.ndarray] = None
    lead_times: Optional[np.ndarray] = None
    covariates: Optional[np.ndarray] = None
    ids: Optional[Sequence[str]] = None
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.demand.shape[0])

    @property
    def horizon(self) -> int:
        return int(self.demand.shape[1])

    def subset(self, index) -> 'ScenarioBatch':
        index = np.asarray(index)

        def pick(a):
            return None if a is None else a[index]
        return replace(
            self,
            demand=self.demand[index],
            initial=self.initial.subset(index),
            underage=pick(self.underage),
            lead_times=pick(self.lead_times),
            covariates=pick(self.covariates),
            ids=None if self.ids is None else [self.ids[i] for i in index],
        )

    def scenario(self, i: int) -> 'ScenarioBatch':
        """A single scenario as a one-row batch."""
        return self.subset([i])

    def primitives(self, instance: ProblemInstance) -> Primitives:
        h = len(self)
        underage = np.broadcast_to(instance.underage, (h, instance.underage.size)).copy()
        if self.underage is not None:
            underage = np.asarray(self.underage, dtype=np.float64).reshape(h, -1)
        holding = np.broadcast_to(instance.holding, (h, instance.holding.size)).copy()
        lead_times = np.broadcast_to(instance.lead_times, (h, instance.lead_times.size)).copy()
        if self.lead_times is not None:
            lead_times = np.asarray(self.lead_times, dtype=np.int64).reshape(h, -1)
        return Primitives(underage=underage, holding=holding, lead_times=lead_times)
