"""
One warehouse, K stores, high/low demand: the relaxed per-period problem
and the echelon level and store base levels derived from it.

Store demand is xi^k = B * U^k with B equal to gamma_high with probability
q and gamma_low otherwise, and U^k ~ Uniform(lower^k, upper^k). Stores have
zero lead time and the warehouse has lead time one.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Tuple

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from scenarios.generators import DemandModel

logger = logging.getLogger(__name__)

LAMBDA_XTOL = 1e-14
SEARCH_XATOL = 1e-10


class AssumptionError(ValueError):
    """Primitives outside the regime where the relaxation bound applies."""


@dataclass(frozen=True)
class TheoryPrimitives:
    gamma_high: float
    gamma_low: float
    q: float
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    underage: Tuple[float, ...]
    holding: Tuple[float, ...]
    warehouse_holding: float
    periods: int = 50

    def __post_init__(self):
        stores = len(np.atleast_1d(self.lower))
        for name in ('lower', 'upper', 'underage', 'holding'):
            values = np.broadcast_to(np.asarray(getattr(self, name), dtype=np.float64), (stores,))
            object.__setattr__(self, name, tuple(float(v) for v in values))
        self.validate()

    @classmethod
    def homogeneous(cls, stores: int, gamma_high: float, gamma_low: float, q: float, lower: float,
                    upper: float, underage: float, holding: float, warehouse_holding: float,
                    periods: int = 50) -> 'TheoryPrimitives':
        return cls(
            gamma_high, gamma_low, q, (lower,) * stores, (upper,) * stores,
            (underage,) * stores, (holding,) * stores, warehouse_holding, periods,
        )

    def validate(self) -> None:
        if not 0 < self.q < 1:
            raise AssumptionError(f'q must lie in (0, 1), got {self.q}')
        if not 0 < self.gamma_low <= self.gamma_high:
            raise AssumptionError('need 0 < gamma_low <= gamma_high')
        lower, upper = np.asarray(self.lower), np.asarray(self.upper)
        if lower.min() <= 0 or np.any(upper < lower):
            raise AssumptionError('uniform bounds need 0 < lower <= upper')
        if min(self.underage) <= 0 or min(self.holding) <= 0 or self.warehouse_holding < 0:
            raise AssumptionError('costs must be positive (warehouse holding nonnegative)')
        if self.warehouse_holding > min(self.holding):
            raise AssumptionError('warehouse holding cost must not exceed any store holding cost')
        if self.periods < 1:
            raise AssumptionError('horizon needs at least one period')
        violated = self.gamma_low * lower < self.gamma_high * upper - self.gamma_low * lower
        if violated.any():
            raise AssumptionError(
                'gamma_low*lower >= gamma_high*upper - gamma_low*lower fails for stores '
                f'{np.flatnonzero(violated).tolist()}'
            )
        if self.q * min(self.underage) < (1 - self.q) * self.warehouse_holding:
            raise AssumptionError(
                f'q*min(p) = {self.q * min(self.underage):.4g} is below '
                f'(1-q)*h0 = {(1 - self.q) * self.warehouse_holding:.4g}'
            )

    @property
    def stores(self) -> int:
        return len(self.lower)

    @property
    def unit_means(self) -> np.ndarray:
        return (np.asarray(self.lower) + np.asarray(self.upper)) / 2.0

    @property
    def mean_total(self) -> float:
        return float(self.unit_means.sum())

    @property
    def demand_high(self) -> float:
        return self.gamma_high * self.mean_total

    @property
    def demand_low(self) -> float:
        return self.gamma_low * self.mean_total

    @property
    def kappa(self) -> float:
        upper = np.asarray(self.upper)
        return float(np.max(np.maximum(upper, 1.0 / upper)))

    def demand_model(self) -> DemandModel:
        return DemandModel(
            'high_low', gamma_high=self.gamma_high, gamma_low=self.gamma_low, q=self.q,
            lower=self.lower, upper=self.upper, enforce_assumption=True,
        )

    def to_dict(self) -> dict:
        return {
            'stores': self.stores,
            'gamma_high': self.gamma_high,
            'gamma_low': self.gamma_low,
            'q': self.q,
            'lower': list(self.lower),
            'upper': list(self.upper),
            'underage': list(self.underage),
            'holding': list(self.holding),
            'warehouse_holding': self.warehouse_holding,
            'periods': self.periods,
        }


class MixtureDemand:
    """
    Per-store distribution of xi^k, a two-component mixture of uniforms.

    The CDF is piecewise linear; a component with lower == upper is a point
    mass and shows up as a vertical step between two knots at the same x.
    """

    def __init__(self, prims: TheoryPrimitives):
        lower, upper = np.asarray(prims.lower), np.asarray(prims.upper)
        self.weights = np.array([1.0 - prims.q, prims.q])
        # (components, stores)
        self.starts = np.stack([prims.gamma_low * lower, prims.gamma_high * lower])
        self.ends = np.stack([prims.gamma_low * upper, prims.gamma_high * upper])
        self.means = (self.weights[:, None] * (self.starts + self.ends) / 2.0).sum(axis=0)
        self.knot_x, self.knot_f = self._knots()

    def _component_cdf(self, y: np.ndarray, left: bool) -> np.ndarray:
        width = self.ends - self.starts
        spread = np.clip((y - self.starts) / np.where(width > 0, width, 1.0), 0.0, 1.0)
        step = (y > self.starts) if left else (y >= self.starts)
        return np.where(width > 0, spread, step.astype(np.float64))

    def cdf(self, y, left: bool = False) -> np.ndarray:
        """P(xi <= y) per store, or P(xi < y) with ``left``; ``y`` broadcasts over stores."""
        y = np.asarray(y, dtype=np.float64)[..., None, :]
        return (self.weights[:, None] * self._component_cdf(y, left)).sum(axis=-2)

    def _knots(self):
        stores = self.starts.shape[1]
        xs, fs = [], []
        for k in range(stores):
            points = np.unique(np.concatenate([self.starts[:, k], self.ends[:, k]]))
            x = np.repeat(points, 2)
            f = np.empty_like(x)
            for i, point in enumerate(points):
                probe = np.full(stores, point)
                f[2 * i] = self.cdf(probe, left=True)[k]
                f[2 * i + 1] = self.cdf(probe)[k]
            xs.append(x)
            fs.append(f)
        width = max(x.size for x in xs)
        knot_x = np.stack([np.pad(x, (0, width - x.size), mode='edge') for x in xs])
        knot_f = np.stack([np.pad(f, (0, width - f.size), mode='edge') for f in fs])
        return knot_x, knot_f

    @property
    def support_low(self) -> np.ndarray:
        return self.knot_x[:, 0]

    @property
    def support_high(self) -> np.ndarray:
        return self.knot_x[:, -1]

    def ppf(self, alpha) -> np.ndarray:
        """Smallest y with F(y) >= alpha, per store, clipped to the support."""
        alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), self.support_low.shape)
        stores = np.arange(alpha.size)
        index = np.clip((self.knot_f < alpha[:, None]).sum(axis=1), 1, self.knot_f.shape[1] - 1)
        x0, x1 = self.knot_x[stores, index - 1], self.knot_x[stores, index]
        f0, f1 = self.knot_f[stores, index - 1], self.knot_f[stores, index]
        rise = f1 - f0
        fraction = np.where(rise > 0, (alpha - f0) / np.where(rise > 0, rise, 1.0), 1.0)
        y = x0 + np.clip(fraction, 0.0, 1.0) * (x1 - x0)
        y = np.where(alpha <= 0, self.support_low, y)
        return np.where(alpha >= 1, self.support_high, y)

    def expected_excess(self, y) -> np.ndarray:
        """E[(y - xi)^+] per store; ``y`` has stores on its last axis."""
        y = np.asarray(y, dtype=np.float64)[..., None, :]
        a, b = self.starts, self.ends
        width = b - a
        inside = (y - a) ** 2 / (2.0 * np.where(width > 0, width, 1.0))
        spread = np.where(y <= a, 0.0, np.where(y >= b, y - (a + b) / 2.0, inside))
        value = np.where(width > 0, spread, np.maximum(y - a, 0.0))
        return (self.weights[:, None] * value).sum(axis=-2)


@dataclass
class RelaxedSolution:
    value: float
    allocation: np.ndarray
    multiplier: float

    def to_dict(self) -> dict:
        return {'value': self.value, 'allocation': self.allocation.tolist(), 'multiplier': self.multiplier}


class RelaxedProblem:
    """
    v(Z, y) = h0 Z + sum_k E[p (xi - y)^+ + h (y - xi)^+ - h0 y] and its
    minimum R(Z) over allocations with sum(y) <= Z.
    """

    def __init__(self, prims: TheoryPrimitives):
        self.prims = prims
        self.demand = MixtureDemand(prims)
        self.underage = np.asarray(prims.underage)
        self.holding = np.asarray(prims.holding)
        self.h0 = float(prims.warehouse_holding)
        self._cached = lru_cache(maxsize=4096)(self._solve)

    def store_costs(self, y) -> np.ndarray:
        """Expected newsvendor cost of every store at level ``y`` (stores on the last axis)."""
        y = np.asarray(y, dtype=np.float64)
        excess = self.demand.expected_excess(y)
        return (self.underage + self.holding) * excess - self.underage * (y - self.demand.means)

    def value(self, z, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        return self.h0 * np.asarray(z, dtype=np.float64) + (self.store_costs(y) - self.h0 * y).sum(axis=-1)

    def levels(self, multiplier: float) -> np.ndarray:
        alpha = (self.underage + self.h0 - multiplier) / (self.underage + self.holding)
        return self.demand.ppf(alpha)

    @property
    def smallest_total(self) -> float:
        return float(self.demand.support_low.sum())

    def solve(self, z: float) -> RelaxedSolution:
        return self._cached(float(z))

    def __call__(self, z: float) -> float:
        return self.solve(z).value

    def _solve(self, z: float) -> RelaxedSolution:
        if z < self.smallest_total - 1e-12:
            raise ValueError(
                f'Z = {z:.6g} is below the smallest allocation {self.smallest_total:.6g}'
            )
        free = self.levels(0.0)
        if free.sum() <= z:
            return RelaxedSolution(float(self.value(z, free)), free, 0.0)
        top = float(np.max(self.underage + self.h0))

        def excess(multiplier):
            return self.levels(multiplier).sum() - z

        if excess(top) >= 0:
            multiplier = top
        else:
            multiplier = brentq(excess, 0.0, top, xtol=LAMBDA_XTOL)
        # flat CDF stretches make the levels jump; split Z across the jump
        low = self.levels(min(multiplier + 1e3 * LAMBDA_XTOL, top))
        high = self.levels(max(multiplier - 1e3 * LAMBDA_XTOL, 0.0))
        slack = high - low
        gap = z - low.sum()
        if slack.sum() > 0:
            y = low + slack * np.clip(gap / slack.sum(), 0.0, 1.0)
        else:
            y = low
        return RelaxedSolution(float(self.value(z, y)), y, float(multiplier))

    def kkt_residuals(self, z: float, solution: RelaxedSolution) -> Dict[str, np.ndarray]:
        """
        Distance of every store's target ratio from its CDF bracket
        [P(xi < y), P(xi <= y)], scaled by p + h, and |lambda (sum y - Z)|.
        For continuous demand the first is |-p P(xi >= y) + h P(xi <= y) - h0 + lambda|.
        """
        y = solution.allocation
        alpha = (self.underage + self.h0 - solution.multiplier) / (self.underage + self.holding)
        below = self.demand.cdf(y, left=True)
        at_or_below = self.demand.cdf(y)
        outside = np.maximum(np.maximum(below - alpha, alpha - at_or_below), 0.0)
        return {
            'stationarity': (self.underage + self.holding) * outside,
            'slackness': np.array(abs(solution.multiplier * (y.sum() - z))),
        }


def solve_Rhat(z: float, prims: TheoryPrimitives) -> RelaxedSolution:
    return RelaxedProblem(prims).solve(z)


@dataclass
class BaseLevels:
    """Echelon level and the store base levels after high and after low demand."""

    echelon: float
    after_high: np.ndarray
    after_low: np.ndarray
    objective: float
    prims: TheoryPrimitives = field(repr=False, default=None)

    def to_dict(self) -> dict:
        payload = {
            'echelon': self.echelon,
            'after_high': self.after_high.tolist(),
            'after_low': self.after_low.tolist(),
            'objective': self.objective,
        }
        if self.prims is not None:
            payload['primitives'] = self.prims.to_dict()
        return payload


def echelon_objective(problem: RelaxedProblem) -> Callable[[float], float]:
    prims = problem.prims

    def objective(level: float) -> float:
        return prims.q * problem(level - prims.demand_high) + (1 - prims.q) * problem(level - prims.demand_low)

    return objective


def echelon_bounds(prims: TheoryPrimitives, problem: RelaxedProblem) -> Tuple[float, float]:
    """Search interval for the echelon level: both relaxed terms must be defined."""
    upper = np.asarray(prims.upper)
    low = max(prims.demand_low, prims.demand_high + problem.smallest_total)
    return low, prims.demand_high + prims.gamma_high * float(upper.sum())


def solve_S_hat(prims: TheoryPrimitives, problem: RelaxedProblem = None) -> float:
    """
    Minimize q R(S - D_high) + (1 - q) R(S - D_low) with bounded Brent
    search. A minimizer pinned at the top of the interval widens it once.
    """
    problem = problem or RelaxedProblem(prims)
    objective = echelon_objective(problem)
    low, high = echelon_bounds(prims, problem)
    for _ in range(2):
        result = minimize_scalar(objective, bounds=(low, high), method='bounded',
                                 options={'xatol': SEARCH_XATOL})
        if not result.success:
            raise RuntimeError(f'echelon search failed: {result.message}')
        step = 1e-4 * max(1.0, high - low)
        if high - result.x > 1e-6 * max(1.0, abs(high)) or objective(high) >= objective(high - step):
            return float(result.x)
        logger.info('echelon minimizer at the interval edge %.6g, widening', high)
        high = low + 2.0 * (high - low)
    raise RuntimeError(f'echelon minimizer stays at the interval edge {high:.6g}')


def base_levels(prims: TheoryPrimitives, problem: RelaxedProblem = None) -> BaseLevels:
    problem = problem or RelaxedProblem(prims)
    echelon = solve_S_hat(prims, problem)
    return BaseLevels(
        echelon=echelon,
        after_high=problem.solve(echelon - prims.demand_high).allocation,
        after_low=problem.solve(echelon - prims.demand_low).allocation,
        objective=echelon_objective(problem)(echelon),
        prims=prims,
    )


def eval_fully_relaxed(prims: TheoryPrimitives, start: float, periods: int = None,
                       problem: RelaxedProblem = None) -> float:
    """
    Optimal expected cost of the fully relaxed system over ``periods``
    periods from system inventory ``start``.

    Every period after the first starts at S - D; when ``start`` exceeds
    S the first order is zero and the second period starts at start - D.
    """
    problem = problem or RelaxedProblem(prims)
    periods = prims.periods if periods is None else int(periods)
    total = problem(start)
    if periods == 1:
        return total
    echelon = solve_S_hat(prims, problem)
    per_period = echelon_objective(problem)(echelon)
    second = echelon_objective(problem)(max(echelon, start))
    return total + second + (periods - 2) * per_period


def backward_recursion(prims: TheoryPrimitives, start: float, periods: int = None,
                       problem: RelaxedProblem = None) -> float:
    """
    J_t(Z) = R(Z) + min_{y >= Z} [q J_{t+1}(y - D_high) + (1 - q) J_{t+1}(y - D_low)],
    J_T = R, solved stage by stage with a numeric search for each stage's
    unconstrained order-up-to level.
    """
    problem = problem or RelaxedProblem(prims)
    periods = prims.periods if periods is None else int(periods)
    low, high = echelon_bounds(prims, problem)
    targets: Dict[int, float] = {}

    @lru_cache(maxsize=None)
    def cost_to_go(stage: int, level: float) -> float:
        if stage == periods - 1:
            return problem(level)
        return problem(level) + expected_next(stage, max(level, targets[stage]))

    @lru_cache(maxsize=None)
    def expected_next(stage: int, level: float) -> float:
        return (prims.q * cost_to_go(stage + 1, level - prims.demand_high)
                + (1 - prims.q) * cost_to_go(stage + 1, level - prims.demand_low))

    for stage in range(periods - 2, -1, -1):
        result = minimize_scalar(lambda y: expected_next(stage, float(y)), bounds=(low, high),
                                 method='bounded', options={'xatol': SEARCH_XATOL})
        targets[stage] = float(result.x)
    return cost_to_go(0, float(start))
