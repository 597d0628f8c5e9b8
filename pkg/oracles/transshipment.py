"""
Analytic echelon level and per-period cost lower bound for a transshipment
center feeding identical stores under jointly normal demand, plus a Monte
Carlo simulator of the relaxed system the bound is derived from.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)


@dataclass
class TransshipmentBound:
    echelon_level: float
    lower_bound: float
    mean_g: float
    std_g: float
    standardized_level: float

    def to_dict(self) -> dict:
        return asdict(self)


def _check_covariance(covariance: np.ndarray, stores: int) -> np.ndarray:
    covariance = np.asarray(covariance, dtype=np.float64)
    if covariance.shape != (stores, stores):
        raise ValueError(f'covariance must be {stores}x{stores}, got {covariance.shape}')
    if not np.allclose(covariance, covariance.T):
        raise ValueError('covariance must be symmetric')
    smallest = float(np.linalg.eigvalsh(covariance).min())
    if smallest < -1e-10 * max(1.0, float(np.abs(covariance).max())):
        raise ValueError(f'covariance is not positive semidefinite (eigenvalue {smallest:.3g})')
    return covariance


def transshipment_bound(
    stores: int,
    underage: float,
    holding: float,
    warehouse_lead_time: int,
    store_lead_time: int,
    means: Sequence[float],
    covariance: np.ndarray,
) -> TransshipmentBound:
    """
    Echelon base-stock level S0 and the lower bound on cost per store-period.

    G is normal with mean (L0 + L1 + 1) * sum(mu) and variance
    L0 * 1'S1 + (L1 + 1) * (sum sigma)^2; S0 is its p/(p+h) quantile and the
    bound is p(mu_G - S0) + (p + h) sigma_G (s Phi(s) + phi(s)), divided by
    the number of stores.
    """
    means = np.asarray(means, dtype=np.float64).reshape(-1)
    if means.size != stores:
        raise ValueError(f'{stores} stores but {means.size} means')
    if underage + holding <= 0:
        raise ValueError('bound needs p + h > 0')
    covariance = _check_covariance(covariance, stores)
    sigmas = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
    mean_g = (warehouse_lead_time + store_lead_time + 1) * means.sum()
    std_g = math.sqrt(
        warehouse_lead_time * covariance.sum() + (store_lead_time + 1) * sigmas.sum() ** 2
    )
    ratio = underage / (underage + holding)
    if std_g == 0:
        return TransshipmentBound(mean_g, 0.0, mean_g, 0.0, 0.0)
    level = float(stats.norm.ppf(ratio, loc=mean_g, scale=std_g))
    s = (level - mean_g) / std_g
    total = underage * (mean_g - level) + (underage + holding) * std_g * (
        s * stats.norm.cdf(s) + stats.norm.pdf(s)
    )
    return TransshipmentBound(level, float(total / stores), float(mean_g), float(std_g), float(s))


@dataclass
class RelaxedEstimate:
    mean: float
    stderr: float
    samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def relaxed_cost(
    bound: TransshipmentBound,
    underage: float,
    holding: float,
    warehouse_lead_time: int,
    store_lead_time: int,
    means: Sequence[float],
    covariance: np.ndarray,
    rng: np.random.Generator,
    samples: int = 200_000,
) -> RelaxedEstimate:
    """
    Monte Carlo cost per store-period of the relaxed system at level S0.

    Each sample draws the demand over the warehouse lead time for all stores
    jointly, then splits what is left of S0 across stores so every store
    sits at the same fractile of its own lead-time demand (inventory may be
    rebalanced freely in the relaxation) and charges each store on an
    independent draw of its (L1 + 1)-period demand.
    """
    means = np.asarray(means, dtype=np.float64).reshape(-1)
    stores = means.size
    covariance = _check_covariance(covariance, stores)
    sigmas = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
    upstream = np.zeros(samples)
    if warehouse_lead_time > 0:
        joint = rng.multivariate_normal(
            warehouse_lead_time * means, warehouse_lead_time * covariance, size=samples, method='eigh',
        )
        upstream = joint.sum(axis=1)
    periods = store_lead_time + 1
    spread = math.sqrt(periods) * sigmas.sum()
    fractile = (bound.echelon_level - upstream - periods * means.sum()) / spread
    targets = periods * means[None, :] + math.sqrt(periods) * sigmas[None, :] * fractile[:, None]
    local = rng.normal(periods * means, math.sqrt(periods) * sigmas, size=(samples, stores))
    cost = (
        underage * np.maximum(local - targets, 0.0) + holding * np.maximum(targets - local, 0.0)
    ).sum(axis=1) / stores
    return RelaxedEstimate(float(cost.mean()), float(cost.std(ddof=1) / math.sqrt(samples)), samples)
