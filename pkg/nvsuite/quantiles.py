"""
Reading a forecast quantile row in both directions: the level at a given
tau, and the tau that reaches a given level.
"""
from typing import Sequence, Tuple

import numpy as np

from nvsuite.forecaster import QUANTILES

FLAT_TOLERANCE = 1e-12


def _segments(row: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.diff(row) > FLAT_TOLERANCE)


def quantile_at(row, tau: float, quantiles: Sequence[float] = QUANTILES) -> float:
    """Level at ``tau``, following the edge slopes outside the grid."""
    row = np.asarray(row, dtype=np.float64)
    knots = np.asarray(quantiles, dtype=np.float64)
    if tau < knots[0]:
        slope = (row[1] - row[0]) / (knots[1] - knots[0])
        return float(row[0] + (tau - knots[0]) * slope)
    if tau > knots[-1]:
        slope = (row[-1] - row[-2]) / (knots[-1] - knots[-2])
        return float(row[-1] + (tau - knots[-1]) * slope)
    return float(np.interp(tau, knots, row))


def inverse_quantile(row, level: float, quantiles: Sequence[float] = QUANTILES) -> Tuple[float, bool]:
    """
    The tau whose forecast quantile equals ``level``.

    Inside the grid this interpolates linearly between knots; outside it
    extends the nearest non-flat segment. A row with no spread returns
    (0.5, True); otherwise the flag is False.
    """
    row = np.asarray(row, dtype=np.float64)
    knots = np.asarray(quantiles, dtype=np.float64)
    if row.shape != knots.shape:
        raise ValueError(f'row of {row.size} values for {knots.size} quantiles')
    rising = _segments(row)
    if rising.size == 0:
        return 0.5, True
    if level <= row[0]:
        i = rising[0]
        anchor = 0
    elif level >= row[-1]:
        i = rising[-1]
        anchor = knots.size - 1
    else:
        candidates = rising[(row[rising] <= level) & (level <= row[rising + 1])]
        i = candidates[0]
        anchor = i
    slope = (knots[i + 1] - knots[i]) / (row[i + 1] - row[i])
    return float(knots[anchor] + (level - row[anchor]) * slope), False


def inverse_quantiles(rows: np.ndarray, levels: np.ndarray, quantiles: Sequence[float] = QUANTILES):
    """Row-wise ``inverse_quantile``; returns (taus, degenerate flags)."""
    rows = np.asarray(rows, dtype=np.float64)
    levels = np.asarray(levels, dtype=np.float64).reshape(-1)
    taus = np.empty(levels.size)
    flags = np.zeros(levels.size, dtype=bool)
    for n in range(levels.size):
        taus[n], flags[n] = inverse_quantile(rows[n], levels[n], quantiles)
    return taus, flags
