"""
The symmetry-aware warehouse policy run in the original (unrelaxed) system.

The warehouse orders up to the echelon level S. Each store orders up to
the base level for the demand regime guessed from system inventory, and
the warehouse scales every request by the same factor when it cannot
cover them all.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import List, Optional

import numpy as np
from django.conf import settings

from scenarios.generators import scenario_streams
from theory.relaxation import BaseLevels, RelaxedProblem, TheoryPrimitives, base_levels

logger = logging.getLogger(__name__)

REGIMES = ('inferred', 'high', 'low')
SCARCITY_TOLERANCE = 1e-9


@dataclass
class ExampleDraws:
    """
    Demand of ``count`` scenarios over ``periods + 1`` periods; column 0 is
    the period before the first decision and only sets the initial state.
    """

    high: np.ndarray
    demand: np.ndarray

    def __len__(self) -> int:
        return int(self.high.shape[0])

    @property
    def periods(self) -> int:
        return int(self.high.shape[1]) - 1

    def subset(self, index) -> 'ExampleDraws':
        return ExampleDraws(self.high[index], self.demand[index])


def draw_example(prims: TheoryPrimitives, count: int, periods: int, seed: int) -> ExampleDraws:
    lower, upper = np.asarray(prims.lower), np.asarray(prims.upper)
    high, demand = [], []
    for rng in scenario_streams(seed, count):
        regime = rng.uniform(size=periods + 1) < prims.q
        units = rng.uniform(lower, upper, size=(periods + 1, prims.stores))
        level = np.where(regime, prims.gamma_high, prims.gamma_low)
        high.append(regime)
        demand.append(level[:, None] * units)
    return ExampleDraws(np.array(high), np.array(demand))


def misclassification_bound(prims: TheoryPrimitives) -> float:
    """Markov-type bound on P(guessed regime != previous regime)."""
    if prims.gamma_high == prims.gamma_low:
        return math.inf
    return 4 * prims.gamma_high * prims.kappa ** 2 / ((prims.gamma_high - prims.gamma_low) * math.sqrt(prims.stores))


@dataclass
class PolicyRun:
    """
    Per-period averages over scored periods.

    ``expected_cost`` replaces each period's realized cost by its
    expectation given the state and allocation; ``gap`` subtracts from it
    the relaxed cost R(S - D) of the previous period's regime, so its mean
    estimates J - J_relaxed with much less noise than the raw cost.
    """

    scenarios: int
    periods: int
    cost: float
    expected_cost: float
    relaxed_cost: float
    gap: float
    gap_stderr: float
    misclassification: float
    scarcity: float

    @property
    def ratio(self) -> float:
        return 1.0 + self.gap / self.relaxed_cost

    @property
    def ratio_stderr(self) -> float:
        return self.gap_stderr / self.relaxed_cost

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload.update({'ratio': self.ratio, 'ratio_stderr': self.ratio_stderr})
        return payload


def _simulate(draws: ExampleDraws, problem: RelaxedProblem, levels: BaseLevels, regime: str, burn_in: int):
    prims = problem.prims
    underage, holding, h0 = problem.underage, problem.holding, problem.h0
    echelon = levels.echelon
    midpoint = (prims.demand_high + prims.demand_low) / 2.0
    relaxed_high = problem(echelon - prims.demand_high)
    relaxed_low = problem(echelon - prims.demand_low)

    rows = len(draws)
    stores = levels.after_high[None, :] - draws.demand[:, 0]
    warehouse = np.full(rows, echelon - levels.after_high.sum())
    sums = {name: np.zeros(rows) for name in ('cost', 'expected', 'gap', 'missed', 'scarce')}
    scored = 0
    for t in range(1, draws.periods + 1):
        system = warehouse + stores.sum(axis=1)
        order = np.maximum(echelon - system, 0.0)
        # a tie with the midpoint counts as high demand
        guessed_low = echelon - system < midpoint
        if regime == 'high':
            guessed_low = np.zeros(rows, dtype=bool)
        elif regime == 'low':
            guessed_low = np.ones(rows, dtype=bool)
        target = np.where(guessed_low[:, None], levels.after_low, levels.after_high)
        requests = np.maximum(target - stores, 0.0)
        needed = requests.sum(axis=1)
        short = needed > warehouse
        share = np.where(short, warehouse / np.where(needed > 0, needed, 1.0), 1.0)
        allocation = requests * share[:, None]
        level = stores + allocation
        demand = draws.demand[:, t]
        leftover = warehouse - allocation.sum(axis=1)

        if t > burn_in:
            scored += 1
            realized = (underage * np.maximum(demand - level, 0.0) + holding * np.maximum(level - demand, 0.0))
            sums['cost'] += realized.sum(axis=1) + h0 * leftover
            expected = problem.value(system, level)
            sums['expected'] += expected
            sums['gap'] += expected - np.where(draws.high[:, t - 1], relaxed_high, relaxed_low)
            sums['missed'] += guessed_low == draws.high[:, t - 1]
            sums['scarce'] += needed > warehouse + SCARCITY_TOLERANCE

        stores = level - demand
        warehouse = leftover + order
    if scored == 0:
        raise ValueError(f'burn-in of {burn_in} periods leaves nothing of {draws.periods} to score')
    return {name: total / scored for name, total in sums.items()}, scored


def run_pi_tilde(
    prims: TheoryPrimitives,
    draws: ExampleDraws,
    levels: Optional[BaseLevels] = None,
    problem: Optional[RelaxedProblem] = None,
    regime: str = 'inferred',
    burn_in: int = 0,
    parallelism: Optional[int] = None,
    shard_size: int = 256,
) -> PolicyRun:
    """
    Simulate the policy on ``draws``.

    ``regime`` 'inferred' guesses the previous demand regime from system
    inventory; 'high' and 'low' always use one set of base levels.
    Scenarios are simulated in shards, in parallel when ``parallelism``
    exceeds one.
    """
    if regime not in REGIMES:
        raise ValueError(f'regime must be one of {REGIMES}, got {regime!r}')
    if draws.demand.shape[2] != prims.stores:
        raise ValueError(f'draws have {draws.demand.shape[2]} stores, primitives {prims.stores}')
    problem = problem or RelaxedProblem(prims)
    levels = levels or base_levels(prims, problem)
    parallelism = parallelism or settings.HDLAB_PARALLELISM
    index = np.arange(len(draws))
    shards = [index[start:start + shard_size] for start in range(0, len(draws), shard_size)]

    def run(shard):
        return _simulate(draws.subset(shard), problem, levels, regime, burn_in)

    if parallelism <= 1 or len(shards) <= 1:
        outcomes = [run(shard) for shard in shards]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(run, shards))
    per_scenario = {name: np.concatenate([outcome[0][name] for outcome in outcomes]) for name in outcomes[0][0]}
    gaps = per_scenario['gap']
    stderr = float(gaps.std(ddof=1) / math.sqrt(gaps.size)) if gaps.size > 1 else math.nan
    result = PolicyRun(
        scenarios=len(draws),
        periods=outcomes[0][1],
        cost=float(per_scenario['cost'].mean()),
        expected_cost=float(per_scenario['expected'].mean()),
        relaxed_cost=levels.objective,
        gap=float(gaps.mean()),
        gap_stderr=stderr,
        misclassification=float(per_scenario['missed'].mean()),
        scarcity=float(per_scenario['scarce'].mean()),
    )
    logger.info(
        'K=%d %s policy: ratio %.5f +- %.5f, misclassified %.4f, scarce %.4f',
        prims.stores, regime, result.ratio, result.ratio_stderr, result.misclassification, result.scarcity,
    )
    return result


def compare_regimes(prims: TheoryPrimitives, draws: ExampleDraws, burn_in: int = 0) -> List[PolicyRun]:
    """The inferred-regime policy next to the two static ones, on the same draws."""
    problem = RelaxedProblem(prims)
    levels = base_levels(prims, problem)
    return [run_pi_tilde(prims, draws, levels, problem, regime, burn_in) for regime in REGIMES]
