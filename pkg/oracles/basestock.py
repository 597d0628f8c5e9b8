"""
Base-stock family of heuristics: analytic newsvendor levels, capped
base-stock search and multi-start echelon-stock search.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from django.conf import settings
from scipy import stats

from diffengine import ParamSet, Tape, affine, columns, concat, minimum, relu_pos
from envsim.models import ActionVector, ProblemInstance, ScenarioBatch
from envsim.simulator import location_means
from policies.base import Policy
from scenarios.generators import DemandModel, derived_rng, draw_trace
from trainer.config import Horizon, TrainConfig
from trainer.hdpo import hdpo_train, scenario_costs

logger = logging.getLogger(__name__)


@dataclass
class SimulationSummary:
    mean: float
    stderr: float
    scenarios: int

    def to_dict(self) -> dict:
        return asdict(self)


def simulate(
    policy,
    scenarios: ScenarioBatch,
    instance: ProblemInstance,
    horizon: Horizon,
    round_actions: bool = False,
    parallelism: int = 1,
) -> SimulationSummary:
    """Mean cost per store-period of ``policy`` with its Monte Carlo standard error."""
    costs = scenario_costs(policy, scenarios, instance, horizon, round_actions, parallelism=parallelism)
    stderr = float(costs.std(ddof=1) / math.sqrt(costs.size)) if costs.size > 1 else 0.0
    return SimulationSummary(mean=float(costs.mean()), stderr=stderr, scenarios=int(costs.size))


def _store_value(values: Sequence[float], store: int) -> float:
    return float(values[0] if len(values) == 1 else values[store])


def _marginal(model: DemandModel, store: int) -> DemandModel:
    """Single-store model with the demand law of ``store``."""
    def pick(values):
        return (_store_value(values, store),) if values else ()
    return replace(
        model,
        mean=pick(model.mean),
        std=pick(model.std),
        cv=pick(model.cv),
        lower=pick(model.lower),
        upper=pick(model.upper),
        rho=0.0,
    )


def newsvendor_level(
    demand: Union[DemandModel, float],
    underage: float,
    holding: float,
    lead_time: int,
    store: int = 0,
    samples: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Optimal constant base-stock level under backlogged demand.

    The level is the p/(p+h) quantile of demand summed over ``lead_time + 1``
    periods: exact for Poisson demand, a Monte Carlo quantile otherwise. The
    Monte Carlo stream depends only on ``seed``, so levels for different
    costs or lead times share their samples.

    Args:
        demand: demand model, or a number for deterministic per-period demand
        underage: p
        holding: h
        lead_time: L
        store: store whose marginal demand is used
        samples: Monte Carlo sample size (HDLAB_MC_SAMPLES by default)
        seed: seed of the common random number stream
    """
    if underage + holding <= 0:
        raise ValueError('newsvendor level needs p + h > 0')
    ratio = underage / (underage + holding)
    periods = int(lead_time) + 1
    if not isinstance(demand, DemandModel):
        return periods * float(demand)
    if demand.kind == 'poisson':
        return float(stats.poisson.ppf(ratio, periods * _store_value(demand.mean, store)))

    samples = samples or settings.HDLAB_MC_SAMPLES
    marginal = _marginal(demand, store)
    factor = None
    if marginal.kind == 'corr_normal':
        factor = np.array([[marginal.cv[0] * marginal.mean[0]]])
    rng = derived_rng(seed, 'newsvendor')
    totals = np.zeros(samples)
    # One column per period so that longer lead times extend, not reshuffle, the sums.
    for _ in range(periods):
        totals += draw_trace(marginal, samples, 1, rng, factor=factor)[:, 0]
    return float(np.quantile(totals, ratio))


class BaseStockPolicy(Policy):
    """Order up to ``level`` of inventory position every period."""

    architecture = 'base_stock'

    def __init__(self, level):
        super().__init__()
        self.level = np.atleast_1d(np.asarray(level, dtype=np.float64))

    def position(self, state):
        position = state.stores.on_hand
        for slot in state.stores.pipeline:
            position = position + slot
        return position

    def act(self, tape, weights, state, context):
        return ActionVector(orders=relu_pos(tape.constant(self.level) - self.position(state)))

    def describe(self) -> dict:
        return dict(super().describe(), level=self.level.tolist())


class CBSPolicy(BaseStockPolicy):
    """Base-stock order capped at ``cap`` units per period."""

    architecture = 'capped_base_stock'

    def __init__(self, level, cap: float):
        super().__init__(level)
        if cap < 0:
            raise ValueError('order cap must be nonnegative')
        self.cap = float(cap)

    def act(self, tape, weights, state, context):
        wanted = super().act(tape, weights, state, context).orders
        return ActionVector(orders=minimum(wanted, tape.constant(np.full(wanted.shape, self.cap))))

    def describe(self) -> dict:
        return dict(super().describe(), cap=self.cap)


@dataclass
class CBSResult:
    level: float
    cap: float
    cost: float
    evaluations: int
    source: str = 'searched'

    def to_dict(self) -> dict:
        return asdict(self)


def _check_single_store_lost(instance: ProblemInstance) -> None:
    if instance.topology != 'single_store' or instance.mode != 'lost':
        raise ValueError('capped base-stock search needs a single-store lost-demand instance')


def cbs_plugged(
    instance: ProblemInstance,
    scenarios: ScenarioBatch,
    horizon: Horizon,
    level: float,
    cap: float,
    parallelism: int = 1,
) -> CBSResult:
    """Cost of externally supplied CBS parameters."""
    _check_single_store_lost(instance)
    summary = simulate(CBSPolicy(level, cap), scenarios, instance, horizon, parallelism=parallelism)
    return CBSResult(float(level), float(cap), summary.mean, 1, source='plugged')


class _CostTable:
    """Memoized CBS costs; misses of one scan are evaluated concurrently."""

    def __init__(self, instance, scenarios, horizon, parallelism):
        self.instance = instance
        self.scenarios = scenarios
        self.horizon = horizon
        self.parallelism = parallelism
        self.costs: Dict[Tuple[float, float], float] = {}

    def _evaluate(self, point):
        level, cap = point
        policy = CBSPolicy(level, cap)
        return float(np.mean(scenario_costs(policy, self.scenarios, self.instance, self.horizon)))

    def scan(self, points: Iterable[Tuple[float, float]]) -> Tuple[float, float]:
        points = list(points)
        missing = [p for p in dict.fromkeys(points) if p not in self.costs]
        if self.parallelism > 1 and len(missing) > 1:
            with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
                values = list(pool.map(self._evaluate, missing))
        else:
            values = [self._evaluate(p) for p in missing]
        self.costs.update(zip(missing, values))
        # First point wins ties, keeping the search order-deterministic.
        return min(points, key=lambda p: (self.costs[p], points.index(p)))


def cbs_search(
    instance: ProblemInstance,
    scenarios: ScenarioBatch,
    horizon: Horizon,
    levels: Optional[Sequence[float]] = None,
    caps: Optional[Sequence[float]] = None,
    max_rounds: int = 10,
    parallelism: int = 1,
) -> CBSResult:
    """
    Search (level, cap) of a capped base-stock policy on ``scenarios``.

    Coordinate grid scans (level with the cap switched off, then cap and
    level alternately) are followed by a +-1 neighbourhood descent. Grids
    default to integers covering mean lead-time demand plus six standard
    deviations; ``inf`` is always a candidate cap.
    """
    _check_single_store_lost(instance)
    mu = float(location_means(scenarios.demand)[0])
    span = (int(instance.lead_times[0]) + 1) * mu
    if levels is None:
        levels = np.arange(0, math.ceil(span + 6 * math.sqrt(max(span, 1.0))) + 1)
    if caps is None:
        caps = np.arange(1, math.ceil(mu + 6 * math.sqrt(max(mu, 1.0))) + 1)
    levels = [float(v) for v in levels]
    caps = [float(c) for c in caps if math.isfinite(c)] + [math.inf]

    table = _CostTable(instance, scenarios, horizon, parallelism)
    level, cap = table.scan((v, math.inf) for v in levels)
    for _ in range(max_rounds):
        previous = (level, cap)
        level, cap = table.scan((level, c) for c in caps)
        level, cap = table.scan((v, cap) for v in levels)
        if (level, cap) == previous:
            break

    while True:
        neighbours = [(level, cap)]
        for dl in (-1.0, 0.0, 1.0):
            for dc in ((0.0,) if math.isinf(cap) else (-1.0, 0.0, 1.0)):
                candidate = (level + dl, cap + dc)
                if candidate[0] >= 0 and candidate[1] >= 0 and candidate != (level, cap):
                    neighbours.append(candidate)
        best = table.scan(neighbours)
        if table.costs[best] >= table.costs[(level, cap)]:
            break
        level, cap = best

    result = CBSResult(level, cap, table.costs[(level, cap)], len(table.costs))
    logger.info('CBS search: level %.0f cap %s cost %.6f after %d evaluations',
                level, cap, result.cost, result.evaluations)
    return result


class EchelonPolicy(Policy):
    """
    Echelon-stock policy for a serial line, upstream echelon first.

    Echelon k raises its echelon position (own position plus every
    downstream position) to level k, limited by the on-hand inventory of
    the echelon feeding it. The levels are trainable.
    """

    architecture = 'echelon_stock'

    def __init__(self, levels):
        levels = np.asarray(levels, dtype=np.float64).reshape(-1)
        super().__init__(ParamSet({'levels': levels}))

    @property
    def levels(self) -> np.ndarray:
        return self.params['levels']

    def act(self, tape, weights, state, context):
        stores = state.stores
        position = stores.on_hand
        for slot in stores.pipeline:
            position = position + slot
        echelons = position.shape[1]
        downstream = np.triu(np.ones((echelons, echelons))).T
        echelon_position = affine(position, tape.constant(downstream))
        wanted = relu_pos(weights['levels'] - echelon_position)
        if echelons == 1:
            return ActionVector(orders=wanted)
        supply = relu_pos(columns(stores.on_hand, 0, echelons - 1))
        transfers = minimum(columns(wanted, 1, echelons), supply)
        return ActionVector(orders=concat([columns(wanted, 0, 1), transfers], axis=1))

    def describe(self) -> dict:
        return dict(super().describe(), levels=self.levels.tolist())


@dataclass
class EchelonResult:
    levels: List[float]
    cost: float
    start_costs: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def echelon_start(instance: ProblemInstance, mean_demand: float, scale: float = 1.0) -> np.ndarray:
    """Mean demand over each echelon's cumulative downstream lead time, times ``scale``."""
    downstream_lead = np.cumsum(instance.lead_times[::-1])[::-1]
    return scale * mean_demand * (downstream_lead + 1.0)


def echelon_search(
    instance: ProblemInstance,
    train: ScenarioBatch,
    dev: ScenarioBatch,
    horizon: Horizon,
    starts: int = 3,
    max_steps: int = 300,
    learning_rate: float = 0.5,
    seed: int = 0,
    parallelism: int = 1,
) -> EchelonResult:
    """
    Fit echelon levels by gradient descent through the simulator.

    Each start runs full-batch Adam on ``train`` from a scaled mean-demand
    guess and keeps its best ``dev`` levels; the best start wins.
    """
    if instance.topology != 'serial':
        raise ValueError('echelon search needs a serial instance')
    cfg = TrainConfig(
        batch_size=len(train),
        learning_rate=learning_rate,
        max_gradient_steps=max_steps,
        train_horizon=horizon,
        dev_horizon=horizon,
        evaluate_every=10,
        shard_size=max(len(train), len(dev)),
        parallelism=parallelism,
    )
    rng = derived_rng(seed, 'echelon-starts')
    mean_demand = float(location_means(train.demand)[0])
    best = None
    start_costs = []
    for start in range(starts):
        scale = 1.0 if start == 0 else rng.uniform(0.8, 1.3)
        policy = EchelonPolicy(echelon_start(instance, mean_demand, scale))
        params, record = hdpo_train(policy, train, dev, instance, cfg, shuffle_seed=seed + start)
        start_costs.append(record.best_dev_loss)
        logger.info('echelon start %d: dev cost %.6f levels %s', start, record.best_dev_loss, params['levels'])
        if best is None or record.best_dev_loss < best[0]:
            best = (record.best_dev_loss, params['levels'].copy())
    return EchelonResult(levels=best[1].tolist(), cost=float(best[0]), start_costs=start_costs)
