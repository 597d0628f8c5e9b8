"""
Exact average-cost dynamic program for a single store with lost demand,
Poisson demand and integer orders.

The state is (on-hand, pipeline oldest first). An order placed now enters
the back of the pipeline; the oldest entry (or, for lead time 1, the order
itself) arrives after demand is served, matching envsim's timing.
"""
import itertools
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse, stats

from envsim.models import ActionVector
from policies.base import Policy

logger = logging.getLogger(__name__)

BOUNDARY_TOLERANCE = 1e-6


class TruncationError(RuntimeError):
    """The greedy policy reaches the edge of the truncated state lattice."""


def truncation_bound(rate: float, lead_time: int, spread: float = 4.0) -> int:
    """
    Lattice size N: inventory position after ordering stays at most N - 1.

    N = ceil(lambda (L + 1) + spread * sqrt(lambda (L + 1))).
    """
    span = rate * (lead_time + 1)
    return max(int(math.ceil(span + spread * math.sqrt(span))), 2)


@dataclass
class DPResult:
    average_cost: float
    lower: float
    upper: float
    iterations: int
    converged: bool
    truncation: int
    boundary_mass: float
    stationary_cost: float
    lead_time: int
    policy: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop('policy')
        return data


class _LostSalesModel:
    """Transition tables of the truncated lattice."""

    def __init__(self, rate, underage, holding, lead_time, size):
        self.size = size
        self.lead_time = lead_time
        n = size
        pmf = stats.poisson.pmf(np.arange(n), rate) if rate > 0 else np.eye(1, n)[0]
        # leftover[m, j] = P((m - D)^+ = j)
        leftover = np.zeros((n, n))
        for m in range(n):
            leftover[m, 1:m + 1] = pmf[:m][::-1]
            leftover[m, 0] = max(1.0 - leftover[m, 1:m + 1].sum(), 0.0)
        self.leftover = leftover
        kept = leftover @ np.arange(n)
        self.cost = underage * (rate - np.arange(n) + kept) + holding * kept

        self.dims = (n,) * lead_time
        grid = np.indices(self.dims).sum(axis=0)
        self.valid = grid <= n - 1
        self.origin = (0,) * lead_time

        if lead_time >= 2:
            pairs = sorted(
                ((m, q) for m in range(n) for q in range(n - m)),
                key=lambda pair: (pair[0] + pair[1], pair[0]),
            )
            self.pair_on_hand = np.array([p[0] for p in pairs])
            self.pair_arriving = np.array([p[1] for p in pairs])
            self.pair_position = self.pair_on_hand + self.pair_arriving
            self.pair_next = np.zeros((len(pairs), n))
            for i, (m, q) in enumerate(pairs):
                self.pair_next[i, q:q + m + 1] = leftover[m, :m + 1]
            self.rests = [
                r for r in itertools.product(range(n), repeat=lead_time - 2) if sum(r) <= n - 1
            ]

    def bellman(self, values: np.ndarray):
        """One application of the Bellman operator; returns (T V, greedy orders)."""
        n = self.size
        updated = np.zeros(self.dims)
        greedy = np.zeros(self.dims, dtype=np.int64)
        if self.lead_time == 1:
            y = np.arange(n)
            block = np.where(y[:, None] + y[None, :] <= n - 1, values[np.minimum(y[:, None] + y[None, :], n - 1)], 0.0)
            q = self.leftover @ block
            q[y[None, :] > (n - 1 - y)[:, None]] = np.inf
            best = q.argmin(axis=1)
            return self.cost + q[y, best], best

        for rest in self.rests:
            budget = n - 1 - sum(rest)
            y = np.arange(budget + 1)
            block = values[(slice(0, budget + 1),) + rest + (slice(0, budget + 1),)]
            block = np.where(y[:, None] + y[None, :] <= budget, block, 0.0)
            rows = int(np.searchsorted(self.pair_position, budget, side='right'))
            q = self.pair_next[:rows, :budget + 1] @ block
            q[y[None, :] > (budget - self.pair_position[:rows])[:, None]] = np.inf
            best = q.argmin(axis=1)
            target = (self.pair_on_hand[:rows], self.pair_arriving[:rows]) + rest
            updated[target] = self.cost[self.pair_on_hand[:rows]] + q[np.arange(rows), best]
            greedy[target] = best
        return updated, greedy

    def stationary(self, greedy: np.ndarray, max_iterations: int, tol: float = 1e-13) -> np.ndarray:
        """Long-run state distribution under ``greedy`` started from the empty system."""
        coords = np.argwhere(self.valid)
        index = np.full(self.dims, -1, dtype=np.int64)
        index[self.valid] = np.arange(len(coords))
        orders = greedy[self.valid]
        on_hand = coords[:, 0]
        rows, cols, probs = [], [], []
        for j in range(self.size):
            sel = np.flatnonzero(on_hand >= j)
            prob = self.leftover[on_hand[sel], j]
            keep = prob > 0
            sel, prob = sel[keep], prob[keep]
            if self.lead_time == 1:
                target = (j + orders[sel],)
            else:
                head = j + coords[sel, 1]
                target = (head,) + tuple(coords[sel, 2:].T) + (orders[sel],)
            rows.append(sel)
            cols.append(index[target])
            probs.append(prob)
        transition = sparse.csr_matrix(
            (np.concatenate(probs), (np.concatenate(rows), np.concatenate(cols))),
            shape=(len(coords), len(coords)),
        )
        backward = transition.T.tocsr()
        dist = np.zeros(len(coords))
        dist[index[self.origin]] = 1.0
        for _ in range(max_iterations):
            following = backward @ dist
            if np.abs(following - dist).sum() < tol:
                return following
            dist = following
        logger.warning('stationary distribution did not settle within %d iterations', max_iterations)
        return dist


def dp_lost_demand(
    rate: float,
    underage: float,
    holding: float,
    lead_time: int,
    truncation: Optional[int] = None,
    spread: float = 4.0,
    tol: float = 1e-8,
    max_iterations: int = 100_000,
) -> DPResult:
    """
    Relative value iteration for the lost-demand single-store problem.

    Iterates until the span of T V - V drops below ``tol``; the average cost
    is the midpoint of its min and max. The greedy policy's stationary
    distribution is then audited: if it puts more than 1e-6 mass on states
    where the order reaches the lattice edge, TruncationError asks for a
    larger ``truncation``.

    Args:
        rate: Poisson mean demand per period
        underage: lost-sale cost p
        holding: holding cost h
        lead_time: L, between 1 and 4
        truncation: lattice size N (from ``truncation_bound`` when None)
    """
    if not 1 <= lead_time <= 4:
        raise ValueError('the lost-demand DP handles lead times 1 to 4')
    if rate < 0 or underage < 0 or holding < 0:
        raise ValueError('rate and costs must be nonnegative')
    size = truncation or truncation_bound(rate, lead_time, spread)
    model = _LostSalesModel(rate, underage, holding, lead_time, size)
    logger.info('lost-demand DP: lambda %.3g p %.3g h %.3g L %d on a lattice of %d states',
                rate, underage, holding, lead_time, int(model.valid.sum()))

    values = np.zeros(model.dims)
    lower, upper = -np.inf, np.inf
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        updated, greedy = model.bellman(values)
        diff = (updated - values)[model.valid]
        lower, upper = float(diff.min()), float(diff.max())
        values = np.where(model.valid, updated - updated[model.origin], 0.0)
        if upper - lower < tol:
            converged = True
            break
    if not converged:
        logger.warning('value iteration stopped at span %.3g after %d sweeps', upper - lower, iterations)

    dist = model.stationary(greedy, max_iterations)
    position = np.argwhere(model.valid).sum(axis=1)
    binding = position + greedy[model.valid] >= size - 1
    boundary_mass = float(dist[binding].sum())
    if boundary_mass > BOUNDARY_TOLERANCE:
        raise TruncationError(
            f'greedy policy reaches the lattice edge with probability {boundary_mass:.3g}; '
            f'increase truncation above {size}'
        )
    stationary_cost = float(dist @ model.cost[np.argwhere(model.valid)[:, 0]])
    result = DPResult(
        average_cost=0.5 * (lower + upper),
        lower=lower,
        upper=upper,
        iterations=iterations,
        converged=converged,
        truncation=size,
        boundary_mass=boundary_mass,
        stationary_cost=stationary_cost,
        lead_time=lead_time,
        policy=greedy,
    )
    logger.info('lost-demand DP converged=%s after %d sweeps: average cost %.6f',
                converged, iterations, result.average_cost)
    return result


class DPPolicy(Policy):
    """Greedy DP policy looked up at the rounded state; orders nothing off the lattice."""

    architecture = 'dp_greedy'

    def __init__(self, result: DPResult):
        super().__init__()
        self.table = result.policy
        self.size = result.truncation
        self.lead_time = result.lead_time

    def act(self, tape, weights, state, context):
        stores = state.stores
        on_hand = np.rint(np.maximum(stores.on_hand.value[:, 0], 0.0)).astype(np.int64)
        slots = stores.pipeline[len(stores.pipeline) - (self.lead_time - 1):] if self.lead_time > 1 else []
        coords = [on_hand] + [np.rint(slot.value[:, 0]).astype(np.int64) for slot in slots]
        position = np.sum(coords, axis=0)
        inside = position <= self.size - 1
        orders = np.zeros(on_hand.shape[0])
        if inside.any():
            orders[inside] = self.table[tuple(c[inside] for c in coords)]
        return ActionVector(orders=tape.constant(orders[:, None]))
