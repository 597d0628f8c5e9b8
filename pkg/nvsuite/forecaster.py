"""
Multi-horizon multi-quantile demand forecaster.

For every quantile level tau in QUANTILES and every horizon m in HORIZONS
the network predicts the tau-quantile of the sum of the next m demands,
given the last WINDOW demands and the days left until the seasonal anchor.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from diffengine import Adam, Node, ParamSet, Tape, backward, mean, relu_pos, total
from policies.checkpoints import load_checkpoint, save_checkpoint
from policies.networks import MLP
from trainer.hdpo import DivergenceError

logger = logging.getLogger(__name__)

QUANTILES = tuple(round(0.05 * i, 2) for i in range(1, 20))
HORIZONS = (5, 6, 7)
WINDOW = 16
DAYS_SCALE = 365.0
SCALE_FLOOR = 1.0


def pinball_loss(targets, grid, quantiles: Sequence[float] = QUANTILES, reduce: bool = True):
    """
    Multi-horizon multi-quantile pinball loss.

    ``targets`` is (N, M) and ``grid`` is (N, Q, M). Each sample's loss is
    summed over quantiles and horizons; ``reduce`` averages over samples.
    """
    targets = np.asarray(targets, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    tau = np.asarray(quantiles, dtype=np.float64)
    if grid.ndim != 3 or targets.shape != (grid.shape[0], grid.shape[2]) or grid.shape[1] != tau.size:
        raise ValueError(
            f'pinball_loss: targets {targets.shape}, grid {grid.shape}, {tau.size} quantiles'
        )
    error = targets[:, None, :] - grid
    tau = tau[None, :, None]
    per_sample = np.maximum(tau * error, (tau - 1.0) * error).sum(axis=(1, 2))
    return float(per_sample.mean()) if reduce else per_sample


def monotone_rearrange(grid: np.ndarray) -> np.ndarray:
    """Sort every horizon's quantile predictions in increasing order."""
    return np.sort(np.asarray(grid, dtype=np.float64), axis=1)


@dataclass
class ForecastSamples:
    """Training pairs: demand windows, anchor days, and the m-period sums that follow."""

    windows: np.ndarray
    days: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return int(self.windows.shape[0])

    def subset(self, index) -> 'ForecastSamples':
        return ForecastSamples(self.windows[index], self.days[index], self.targets[index])


def make_samples(
    demand: np.ndarray,
    covariates: Optional[np.ndarray] = None,
    window: int = WINDOW,
    horizons: Sequence[int] = HORIZONS,
) -> ForecastSamples:
    """
    Every length-``window`` history of every trace, paired with the sums of
    the next m demands for each horizon m.

    Args:
        demand: (H, T) or (H, T, 1) demand traces
        covariates: matching days-until-anchor, or None
    """
    demand = np.asarray(demand, dtype=np.float64)
    if demand.ndim == 3:
        demand = demand[:, :, 0]
    rows, periods = demand.shape
    longest = max(horizons)
    starts = np.arange(window, periods - longest + 1)
    if starts.size == 0:
        raise ValueError(
            f'traces of {periods} periods are too short for a {window}-period window '
            f'and a {longest}-period horizon'
        )
    history = np.lib.stride_tricks.sliding_window_view(demand, window, axis=1)[:, starts - window]
    cumulative = np.concatenate([np.zeros((rows, 1)), np.cumsum(demand, axis=1)], axis=1)
    targets = np.stack(
        [cumulative[:, starts + m] - cumulative[:, starts] for m in horizons], axis=-1,
    )
    if covariates is None:
        days = np.zeros((rows, starts.size))
    else:
        covariates = np.asarray(covariates, dtype=np.float64)
        days = (covariates[:, :, 0] if covariates.ndim == 3 else covariates)[:, starts]
    return ForecastSamples(
        windows=history.reshape(-1, window),
        days=days.reshape(-1),
        targets=targets.reshape(-1, len(horizons)),
    )


@dataclass
class FitRecord:
    steps: int = 0
    best_step: int = 0
    best_dev_loss: float = float('inf')
    history: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            'steps': self.steps,
            'best_step': self.best_step,
            'best_dev_loss': self.best_dev_loss,
            'history': self.history,
        }


class QuantileForecaster:
    """
    MLP from a scaled demand window to a (Q, M) quantile grid.

    Inputs are divided by the window mean (floored at 1); the log of that
    scale and the anchor days over 365 are appended, and the network output
    is multiplied back by the scale.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        window: int = WINDOW,
        quantiles: Sequence[float] = QUANTILES,
        horizons: Sequence[int] = HORIZONS,
        hidden: Sequence[int] = (128, 128),
    ):
        self.window = int(window)
        self.quantiles = tuple(float(q) for q in quantiles)
        self.horizons = tuple(int(m) for m in horizons)
        self.hidden = tuple(int(units) for units in hidden)
        self.network = MLP(
            'forecaster', [('inputs', self.window + 2)], self.hidden, len(self.quantiles) * len(self.horizons),
        )
        self.params = ParamSet(self.network.initial_arrays(rng))

    @property
    def grid_shape(self):
        return len(self.quantiles), len(self.horizons)

    def horizon_index(self, lead_times) -> np.ndarray:
        """Grid column holding the (L + 1)-period sum for every lead time L."""
        lead_times = np.asarray(lead_times, dtype=np.int64)
        index = np.full(lead_times.shape, -1, dtype=np.int64)
        for j, m in enumerate(self.horizons):
            index[lead_times + 1 == m] = j
        if np.any(index < 0):
            missing = sorted(set((lead_times[index < 0] + 1).tolist()))
            raise ValueError(f'forecaster has no horizon for {missing}; available {self.horizons}')
        return index

    def _inputs(self, windows: np.ndarray, days: Optional[np.ndarray]):
        windows = np.asarray(windows, dtype=np.float64).reshape(-1, self.window)
        scale = np.maximum(windows.mean(axis=1, keepdims=True), SCALE_FLOOR)
        if days is None:
            days = np.zeros(windows.shape[0])
        days = np.asarray(days, dtype=np.float64).reshape(-1, 1) / DAYS_SCALE
        return np.concatenate([windows / scale, np.log1p(scale), days], axis=1), scale

    def forward(self, tape: Tape, weights, windows: np.ndarray, days: Optional[np.ndarray]) -> Node:
        """Flat (N, Q * M) grid, quantile-major, on ``tape``."""
        inputs, scale = self._inputs(windows, days)
        out = self.network.forward(weights, {'inputs': tape.constant(inputs)})
        return out * scale

    def predict(self, windows: np.ndarray, days: Optional[np.ndarray] = None) -> np.ndarray:
        """Monotone (N, Q, M) quantile grid."""
        tape = Tape(record=False)
        flat = self.forward(tape, self.params.bind(tape), windows, days).value
        return monotone_rearrange(flat.reshape(-1, *self.grid_shape))

    def loss_node(self, tape: Tape, weights, samples: ForecastSamples) -> Node:
        flat = self.forward(tape, weights, samples.windows, samples.days)
        targets = np.tile(samples.targets, (1, len(self.quantiles)))
        tau = np.repeat(np.asarray(self.quantiles), len(self.horizons))
        error = targets - flat
        loss = error * tau + relu_pos(-error)
        return mean(total(loss, axis=1))

    def loss(self, samples: ForecastSamples) -> float:
        return pinball_loss(samples.targets, self.predict(samples.windows, samples.days), self.quantiles)

    def fit(
        self,
        train: ForecastSamples,
        dev: ForecastSamples,
        batch_size: int = 1024,
        learning_rate: float = 1e-3,
        max_steps: int = 5000,
        evaluate_every: int = 100,
        patience: Optional[int] = None,
        seed: int = 0,
    ) -> FitRecord:
        """
        Adam on minibatches of ``train``; keeps the parameters with the lowest
        dev pinball loss seen at an evaluation.
        """
        if len(train) == 0 or len(dev) == 0:
            raise ValueError('forecaster training needs nonempty train and dev samples')
        batch_size = min(batch_size, len(train))
        optimizer = Adam(self.params, learning_rate)
        shuffler = np.random.default_rng(seed)
        record = FitRecord()
        best = self.params.snapshot()
        stale = 0
        order = shuffler.permutation(len(train))
        cursor = 0
        for step in range(1, max_steps + 1):
            if cursor + batch_size > len(train):
                order = shuffler.permutation(len(train))
                cursor = 0
            index = order[cursor:cursor + batch_size]
            cursor += batch_size
            tape = Tape(record=True)
            root = self.loss_node(tape, self.params.bind(tape), train.subset(index))
            grads = backward(root, self.params)
            if not np.isfinite(root.value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise DivergenceError(f'non-finite forecaster loss at step {step}')
            optimizer.step(grads)
            record.steps = step
            if step % evaluate_every and step != max_steps:
                continue
            dev_loss = self.loss(dev)
            record.history.append({'step': step, 'train_loss': float(root.value), 'dev_loss': dev_loss})
            logger.info('forecaster step %d train %.4f dev %.4f', step, float(root.value), dev_loss)
            if dev_loss < record.best_dev_loss:
                record.best_dev_loss = dev_loss
                record.best_step = step
                best = self.params.snapshot()
                stale = 0
            else:
                stale += evaluate_every
                if patience is not None and stale >= patience:
                    logger.info('forecaster early stop at step %d', step)
                    break
        self.params.assign(best)
        return record

    def calibration(self, samples: ForecastSamples) -> np.ndarray:
        """(Q, M) fraction of targets at or below each predicted quantile."""
        grid = self.predict(samples.windows, samples.days)
        return (samples.targets[:, None, :] <= grid).mean(axis=0)

    def loss_ratio(self, samples: ForecastSamples) -> np.ndarray:
        """
        Pinball loss per horizon divided by the sum of targets, the
        scale-free error used to compare forecasters across datasets.
        """
        grid = self.predict(samples.windows, samples.days)
        tau = np.asarray(self.quantiles)[None, :, None]
        error = samples.targets[:, None, :] - grid
        per_horizon = np.maximum(tau * error, (tau - 1.0) * error).sum(axis=(0, 1))
        return per_horizon / np.maximum(samples.targets.sum(axis=0), 1e-12)

    def describe(self) -> dict:
        return {
            'window': self.window,
            'quantiles': list(self.quantiles),
            'horizons': list(self.horizons),
            'hidden': list(self.hidden),
        }

    def save(self, path: Path, fingerprint: str = '') -> Path:
        return save_checkpoint(path, dict(self.params.items()), fingerprint, {'forecaster': self.describe()})

    @classmethod
    def load(cls, path: Path) -> 'QuantileForecaster':
        arrays, header = load_checkpoint(path)
        spec = header.get('meta', {}).get('forecaster')
        if spec is None:
            raise ValueError(f'{path} is not a forecaster checkpoint')
        forecaster = cls(
            np.random.default_rng(0), spec['window'], spec['quantiles'], spec['horizons'], spec['hidden'],
        )
        forecaster.params.assign(arrays)
        return forecaster
