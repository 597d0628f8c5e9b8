"""
Synthetic demand traces and per-scenario primitives.

Every scenario draws from its own RNG stream, derived from the run seed and
the scenario index, so the traces do not depend on how generation is
split across threads.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from envsim.models import ProblemInstance
from scenarios.store import TraceStore

logger = logging.getLogger(__name__)

DEMAND_KINDS = ('poisson', 'trunc_normal', 'corr_normal', 'high_low')


def scenario_streams(seed: int, count: int, start: int = 0) -> List[np.random.Generator]:
    """Independent generators for scenarios ``start`` .. ``start + count - 1``."""
    return [np.random.default_rng(np.random.SeedSequence([int(seed), start + i])) for i in range(count)]


def derived_rng(seed: int, label: str) -> np.random.Generator:
    """A generator for one named purpose (initial states, shuffling, ...)."""
    key = [int(byte) for byte in label.encode('utf-8')]
    return np.random.default_rng(np.random.SeedSequence([int(seed), 1_000_003] + key))


@dataclass(frozen=True)
class DemandModel:
    """
    Demand distribution i.i.d. over time.

    ``mean`` is the Poisson rate or normal mean per store; scalars broadcast
    over stores. ``std`` is used by trunc_normal and ``cv`` by corr_normal.
    For high_low, demand is B_t * U_t^k with B_t equal to ``gamma_high``
    with probability ``q`` and ``gamma_low`` otherwise, and
    U_t^k ~ Uniform(lower^k, upper^k).
    """

    kind: str
    mean: Tuple[float, ...] = (5.0,)
    std: Tuple[float, ...] = ()
    cv: Tuple[float, ...] = ()
    rho: float = 0.0
    truncate: bool = True
    gamma_high: float = 1.0
    gamma_low: float = 1.0
    q: float = 0.5
    lower: Tuple[float, ...] = ()
    upper: Tuple[float, ...] = ()
    enforce_assumption: bool = False

    def __post_init__(self):
        for name in ('mean', 'std', 'cv', 'lower', 'upper'):
            value = getattr(self, name)
            object.__setattr__(self, name, tuple(float(v) for v in np.atleast_1d(value)))
        self.validate()

    def validate(self) -> None:
        if self.kind not in DEMAND_KINDS:
            raise ValueError(f'demand kind must be one of {DEMAND_KINDS}, got {self.kind!r}')
        if self.kind == 'poisson' and min(self.mean) < 0:
            raise ValueError('Poisson rates must be nonnegative')
        if self.kind == 'trunc_normal' and (not self.std or min(self.std) <= 0):
            raise ValueError('trunc_normal needs std > 0')
        if self.kind == 'corr_normal' and (not self.cv or min(self.cv) <= 0):
            raise ValueError('corr_normal needs cv > 0')
        if self.kind == 'high_low':
            if not 0 < self.q < 1:
                raise ValueError('high_low needs 0 < q < 1')
            if not 0 < self.gamma_low <= self.gamma_high:
                raise ValueError('high_low needs 0 < gamma_low <= gamma_high')
            if not self.lower or not self.upper:
                raise ValueError('high_low needs lower and upper uniform bounds')
            if min(np.subtract(self.upper, self.lower)) < 0:
                raise ValueError('high_low needs lower <= upper')
            if self.enforce_assumption:
                lower, upper = np.asarray(self.lower), np.asarray(self.upper)
                violated = self.gamma_low * lower < self.gamma_high * upper - self.gamma_low * lower
                if min(self.lower) <= 0 or violated.any():
                    raise ValueError(
                        'high_low bounds violate gamma_low*lower >= gamma_high*upper - gamma_low*lower '
                        f'for stores {np.flatnonzero(violated).tolist()}'
                    )

    def per_store(self, values: Tuple[float, ...], stores: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(values, dtype=np.float64), (stores,)).copy()

    def covariance(self, stores: int) -> np.ndarray:
        mean = self.per_store(self.mean, stores)
        std = self.per_store(self.cv, stores) * mean
        correlation = np.full((stores, stores), self.rho)
        np.fill_diagonal(correlation, 1.0)
        return correlation * np.outer(std, std)

    def to_dict(self) -> dict:
        return asdict(self)


def _cholesky(model: DemandModel, stores: int) -> np.ndarray:
    try:
        return np.linalg.cholesky(model.covariance(stores))
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            f'correlation {model.rho} with {stores} stores is not a valid correlation matrix'
        ) from exc


def draw_trace(model: DemandModel, periods: int, stores: int, rng: np.random.Generator,
               allow_negative: bool = False, factor: Optional[np.ndarray] = None) -> np.ndarray:
    """One (T, K) demand trace."""
    shape = (periods, stores)
    if model.kind == 'poisson':
        return rng.poisson(model.per_store(model.mean, stores), size=shape).astype(np.float64)
    if model.kind == 'high_low':
        level = np.where(rng.uniform(size=periods) < model.q, model.gamma_high, model.gamma_low)
        units = rng.uniform(model.per_store(model.lower, stores), model.per_store(model.upper, stores), size=shape)
        return level[:, None] * units
    mean = model.per_store(model.mean, stores)
    if model.kind == 'trunc_normal':
        draws = rng.normal(mean, model.per_store(model.std, stores), size=shape)
    else:
        draws = mean + rng.standard_normal(size=shape) @ factor.T
    if model.truncate and not allow_negative:
        draws = np.maximum(draws, 0.0)
    return draws


def generate(
    model: DemandModel,
    periods: int,
    stores: int,
    count: int,
    seed: int,
    allow_negative: bool = False,
    parallelism: int = 1,
) -> TraceStore:
    """
    Draw ``count`` demand traces of ``periods`` x ``stores``.

    Normal draws are censored at 0 unless ``allow_negative`` is set or the
    model disables truncation.
    """
    if periods < 1 or stores < 1 or count < 1:
        raise ValueError('periods, stores and count must be positive')
    factor = _cholesky(model, stores) if model.kind == 'corr_normal' else None
    demand = np.empty((count, periods, stores))

    def fill(bounds):
        start, stop = bounds
        for i, rng in enumerate(scenario_streams(seed, stop - start, start)):
            demand[start + i] = draw_trace(model, periods, stores, rng, allow_negative, factor)

    chunk = max(1, -(-count // max(parallelism, 1)))
    bounds = [(start, min(start + chunk, count)) for start in range(0, count, chunk)]
    if parallelism > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            list(pool.map(fill, bounds))
    else:
        for item in bounds:
            fill(item)
    logger.info('generated %d %s traces of %d periods x %d stores', count, model.kind, periods, stores)
    return TraceStore(
        demand=demand,
        provenance={'source': 'synthetic', 'seed': int(seed), 'model': model.to_dict(), 'allow_negative': allow_negative},
    )


@dataclass(frozen=True)
class PrimitiveRanges:
    """Per-scenario cost and lead-time sampling for heterogeneous datasets."""

    underage_mean: float
    spread: Tuple[float, float] = (0.7, 1.3)
    lead_range: Tuple[int, int] = (4, 6)
    holding: float = 1.0


def sample_primitives(ranges: PrimitiveRanges, count: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw per-scenario underage costs p = underage_mean * Uniform(spread) and
    lead times uniform on the integers of ``lead_range``.

    Returns:
        tuple: (underage (H, 1), lead_times (H, 1))
    """
    if ranges.underage_mean <= 0:
        raise ValueError('underage_mean must be positive')
    low, high = ranges.lead_range
    if low < 1 or high < low:
        raise ValueError(f'invalid lead range {ranges.lead_range}')
    underage = ranges.underage_mean * rng.uniform(*ranges.spread, size=(count, 1))
    lead_times = rng.integers(low, high + 1, size=(count, 1))
    return underage, lead_times


@dataclass
class InstanceFamily:
    """A sampled instance with the demand model and store statistics it was drawn with."""

    instance: ProblemInstance
    model: DemandModel
    store_means: np.ndarray
    store_cvs: np.ndarray
    meta: dict = field(default_factory=dict)


def transshipment_family(stores: int, lead_time: int, underage: float, rho: float,
                         rng: np.random.Generator, warehouse_lead_time: int = 3) -> InstanceFamily:
    """
    Transshipment center feeding identical-cost stores; normal demand with
    means in [2.5, 7.5] and cvs in [0.16, 0.32] that may go negative.
    """
    means = rng.uniform(2.5, 7.5, size=stores)
    cvs = rng.uniform(0.16, 0.32, size=stores)
    instance = ProblemInstance(
        'transshipment', 'backlogged', [underage] * stores, [1.0] * stores, [lead_time] * stores,
        warehouse_holding=0.0, warehouse_lead_time=warehouse_lead_time, allow_negative_demand=True,
    )
    model = DemandModel('corr_normal', mean=tuple(means), cv=tuple(cvs), rho=rho, truncate=False)
    return InstanceFamily(instance, model, means, cvs)


def many_store_family(stores: int, rng: np.random.Generator) -> InstanceFamily:
    """
    Warehouse plus lost-demand stores with p in [6.3, 11.7], h in [0.7, 1.3],
    L in {2, 3}, means in [2.5, 7.5], cvs in [0.25, 0.5], correlation 0.5
    censored at 0, warehouse lead time 6 and holding 0.3.
    """
    underage = rng.uniform(6.3, 11.7, size=stores)
    holding = rng.uniform(0.7, 1.3, size=stores)
    lead_times = rng.integers(2, 4, size=stores)
    means = rng.uniform(2.5, 7.5, size=stores)
    cvs = rng.uniform(0.25, 0.5, size=stores)
    instance = ProblemInstance(
        'warehouse_stores', 'lost', underage, holding, lead_times,
        warehouse_holding=0.3, warehouse_lead_time=6,
    )
    model = DemandModel('corr_normal', mean=tuple(means), cv=tuple(cvs), rho=0.5, truncate=True)
    return InstanceFamily(instance, model, means, cvs)


def synthetic_sales(
    traces: int,
    weeks: int,
    seed: int,
    start: str = '2013-01-07',
    anchor: Tuple[int, int] = (12, 25),
    perishable_share: float = 0.1,
    intermittent_share: float = 0.1,
) -> pd.DataFrame:
    """
    Daily sales rows (trace_id, date, quantity, perishable_flag) with a yearly
    peak before the anchor date, a weekly cycle and random level shifts.

    A share of traces is intermittent (mostly zero weeks) so the ingest
    filters have something to remove.
    """
    days = pd.date_range(start, periods=7 * weeks, freq='D')
    ahead = days_to_anchor(days, anchor)
    frames = []
    for index, rng in enumerate(scenario_streams(seed, traces)):
        level = rng.lognormal(mean=1.0, sigma=0.8)
        peak = 1.0 + rng.uniform(0.2, 1.5) * np.exp(-ahead / rng.uniform(7.0, 21.0))
        weekday = 1.0 + 0.2 * np.sin(2 * np.pi * (days.dayofweek.to_numpy() + rng.uniform(0, 7)) / 7.0)
        shifts = np.ones(days.size)
        for _ in range(rng.integers(0, 3)):
            shifts[rng.integers(0, days.size):] *= rng.uniform(0.6, 1.6)
        rate = level * peak * weekday * shifts
        if rng.uniform() < intermittent_share:
            rate = rate * (rng.uniform(size=days.size) < 0.05)
        frames.append(pd.DataFrame({
            'trace_id': f'T{index:05d}',
            'date': days,
            'quantity': rng.poisson(rate).astype(float),
            'perishable_flag': int(rng.uniform() < perishable_share),
        }))
    return pd.concat(frames, ignore_index=True)


def days_to_anchor(dates, anchor: Tuple[int, int] = (12, 25)) -> np.ndarray:
    """Days from each date until the next occurrence of month/day ``anchor``."""
    dates = pd.DatetimeIndex(dates)
    month, day = anchor
    this_year = pd.to_datetime(pd.DataFrame({'year': dates.year, 'month': month, 'day': day}))
    next_year = pd.to_datetime(pd.DataFrame({'year': dates.year + 1, 'month': month, 'day': day}))
    target = np.where(this_year.to_numpy() >= dates.to_numpy(), this_year.to_numpy(), next_year.to_numpy())
    return ((target - dates.to_numpy()) / np.timedelta64(1, 'D')).astype(np.float64)
