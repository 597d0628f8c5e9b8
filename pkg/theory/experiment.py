"""
How the policy's cost ratio to the relaxed bound shrinks with the number
of stores.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Dict, List, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from hdlab.hashing import plain
from theory.policy import draw_example, misclassification_bound, run_pi_tilde
from theory.relaxation import RelaxedProblem, TheoryPrimitives, base_levels

logger = logging.getLogger(__name__)

MIN_STORE_COUNTS = 4
FLAG_SIGMAS = 3.0

EXAMPLE_FAMILY = {
    'gamma_high': 1.5,
    'gamma_low': 1.0,
    'q': 0.5,
    'lower': 10.0,
    'upper': 12.0,
    'underage': 4.0,
    'holding': 1.0,
    'warehouse_holding': 0.5,
}


def homogeneous_family(**overrides) -> Callable[[int], TheoryPrimitives]:
    """Identical stores; every argument but the store count comes from EXAMPLE_FAMILY or ``overrides``."""
    return partial(TheoryPrimitives.homogeneous, **{**EXAMPLE_FAMILY, **overrides})


@dataclass
class GapTable:
    frame: pd.DataFrame
    exponent: float
    intercept: float
    levels: Dict[int, dict] = field(default_factory=dict)

    @property
    def flagged(self) -> List[int]:
        return self.frame.loc[self.frame['below_bound'], 'stores'].tolist()

    def write(self, directory: Path) -> Dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        table = directory / 'gap_scaling.csv'
        frame = self.frame.assign(fitted_exponent=self.exponent)
        frame.to_csv(table, index=False)
        artifact = directory / 'base_levels.json'
        artifact.write_text(json.dumps(plain({str(k): v for k, v in self.levels.items()}), indent=2, sort_keys=True))
        return {'table': table, 'base_levels': artifact}


def fit_exponent(stores: Sequence[int], ratios: Sequence[float]):
    """Least-squares slope and intercept of log(ratio - 1) against log K."""
    stores = np.asarray(stores, dtype=np.float64)
    excess = np.asarray(ratios, dtype=np.float64) - 1.0
    usable = excess > 0
    if usable.sum() < 2:
        logger.warning('fewer than two ratios above one; no exponent fitted')
        return math.nan, math.nan
    fit = stats.linregress(np.log(stores[usable]), np.log(excess[usable]))
    return float(fit.slope), float(fit.intercept)


def gap_scaling_experiment(
    family: Callable[[int], TheoryPrimitives],
    store_counts: Sequence[int],
    scenarios: int = 1000,
    periods: int = 100,
    seed: int = 0,
    burn_in: int = 0,
    parallelism: int = None,
) -> GapTable:
    """
    Simulate the inferred-regime policy for every store count and compare it
    with the relaxed per-period cost. Ratios below one by more than three
    standard errors are flagged.
    """
    store_counts = [int(k) for k in store_counts]
    if len(store_counts) < MIN_STORE_COUNTS:
        raise ValueError(f'need at least {MIN_STORE_COUNTS} store counts, got {store_counts}')
    rows, levels = [], {}
    for stores in store_counts:
        prims = family(stores)
        problem = RelaxedProblem(prims)
        solution = base_levels(prims, problem)
        draws = draw_example(prims, scenarios, periods, seed)
        run = run_pi_tilde(prims, draws, solution, problem, burn_in=burn_in, parallelism=parallelism)
        below = run.ratio < 1.0 - FLAG_SIGMAS * run.ratio_stderr
        if below:
            logger.warning('K=%d: ratio %.6f is below the relaxed bound by more than %g standard errors',
                           stores, run.ratio, FLAG_SIGMAS)
        rows.append({
            'stores': stores,
            'echelon': solution.echelon,
            'relaxed_cost': run.relaxed_cost,
            'cost': run.cost,
            'ratio': run.ratio,
            'ratio_stderr': run.ratio_stderr,
            'misclassification': run.misclassification,
            'misclassification_bound': misclassification_bound(prims),
            'scarcity': run.scarcity,
            'below_bound': bool(below),
        })
        levels[stores] = solution.to_dict()
    frame = pd.DataFrame(rows)
    exponent, intercept = fit_exponent(frame['stores'], frame['ratio'])
    logger.info('gap exponent %.3f over K=%s', exponent, store_counts)
    return GapTable(frame, exponent, intercept, levels)
