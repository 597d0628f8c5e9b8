"""
Hindsight differentiable policy optimization.

Each gradient step averages, over a minibatch of historical scenarios, the
gradient of the policy's realized cost obtained by backpropagating through
the simulator.
"""
import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from diffengine import Adam, ParamSet, Tape, backward
from envsim.models import ProblemInstance, ScenarioBatch
from envsim.simulator import rollout
from trainer.config import Horizon, TrainConfig

logger = logging.getLogger(__name__)

PROGRESS_FIELDS = ('epoch', 'train_loss', 'dev_loss', 'steps', 'seconds')


class DivergenceError(RuntimeError):
    """Loss or gradient became non-finite during training."""


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: Optional[float]
    steps: int
    seconds: float


@dataclass
class RunRecord:
    """
    Outcome of one training run.

    ``seconds`` fields are wall-clock measurements; ``deterministic_dict``
    drops them so two runs with the same seeds compare equal.
    """

    fingerprint: str = ''
    seeds: Dict[str, int] = field(default_factory=dict)
    epochs: List[EpochRecord] = field(default_factory=list)
    best_dev_loss: float = float('inf')
    best_epoch: int = 0
    best_checkpoint: Optional[str] = None
    gradient_steps: int = 0
    seconds: float = 0.0
    stop_reason: str = ''
    test_metrics: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def deterministic_dict(self) -> dict:
        data = self.to_dict()
        data.pop('seconds')
        for epoch in data['epochs']:
            epoch.pop('seconds')
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> 'RunRecord':
        data = dict(data)
        data['epochs'] = [EpochRecord(**epoch) for epoch in data.get('epochs', [])]
        return cls(**data)


def _shards(count: int, shard_size: int) -> List[np.ndarray]:
    index = np.arange(count)
    return [index[start:start + shard_size] for start in range(0, count, shard_size)]


def _map_shards(fn: Callable, shards: List[np.ndarray], parallelism: int) -> list:
    if parallelism <= 1 or len(shards) <= 1:
        return [fn(shard) for shard in shards]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, shards))


def batch_gradient(
    policy,
    batch: ScenarioBatch,
    instance: ProblemInstance,
    horizon: Horizon,
    shard_size: int = 256,
    parallelism: int = 1,
    detach_periods: int = 0,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Mean per-scenario loss of ``batch`` and its gradient.

    Shards are fixed by ``shard_size``; their gradient sums are reduced in
    shard order, so the result does not depend on ``parallelism``.
    """
    def run(index):
        tape = Tape(record=True)
        result = rollout(
            policy, batch.subset(index), instance, horizon.periods, horizon.burn_in,
            tape=tape, detach_periods=detach_periods,
        )
        root = result.loss * float(len(index))
        return float(root.value), backward(root, policy.params)

    outcomes = _map_shards(run, _shards(len(batch), shard_size), parallelism)
    loss_sum = 0.0
    grads = {name: np.zeros_like(value) for name, value in policy.params.items()}
    for shard_loss, shard_grads in outcomes:
        loss_sum += shard_loss
        for name in grads:
            grads[name] = grads[name] + shard_grads[name]
    count = float(len(batch))
    return loss_sum / count, {name: g / count for name, g in grads.items()}


def scenario_costs(
    policy,
    scenarios: ScenarioBatch,
    instance: ProblemInstance,
    horizon: Horizon,
    round_actions: bool = False,
    allow_returns: bool = False,
    shard_size: int = 1024,
    parallelism: int = 1,
) -> np.ndarray:
    """Cost per store-period of every scenario, without gradient recording."""
    def run(index):
        return rollout(
            policy, scenarios.subset(index), instance, horizon.periods, horizon.burn_in,
            tape=Tape(record=False), round_actions=round_actions, allow_returns=allow_returns,
        ).per_scenario

    parts = _map_shards(run, _shards(len(scenarios), shard_size), parallelism)
    return np.concatenate(parts)


def evaluate(
    policy,
    scenarios: ScenarioBatch,
    instance: ProblemInstance,
    horizon: Horizon,
    round_actions: bool = False,
    allow_returns: bool = False,
    shard_size: int = 1024,
    parallelism: int = 1,
) -> float:
    """Mean cost per store-period over ``scenarios``."""
    costs = scenario_costs(
        policy, scenarios, instance, horizon, round_actions, allow_returns, shard_size, parallelism,
    )
    return float(np.mean(costs))


def gap_percent(cost: float, oracle: float) -> float:
    if oracle == 0:
        raise ValueError('gap is undefined against a zero oracle cost')
    return 100.0 * (cost - oracle) / oracle


def _nonfinite(grads: Dict[str, np.ndarray]) -> List[str]:
    return [name for name, g in grads.items() if not np.all(np.isfinite(g))]


def append_progress(path: Path, row: EpochRecord) -> None:
    path = Path(path)
    fresh = not path.exists()
    with open(path, 'a', newline='') as handle:
        writer = csv.writer(handle)
        if fresh:
            writer.writerow(PROGRESS_FIELDS)
        writer.writerow([row.epoch, repr(row.train_loss), repr(row.dev_loss), row.steps, f'{row.seconds:.3f}'])


def hdpo_train(
    policy,
    train: ScenarioBatch,
    dev: ScenarioBatch,
    instance: ProblemInstance,
    cfg: TrainConfig,
    shuffle_seed: int = 0,
    progress_path: Optional[Path] = None,
    fingerprint: str = '',
    seeds: Optional[Dict[str, int]] = None,
) -> Tuple[ParamSet, RunRecord]:
    """
    Train ``policy`` in place and return its best-dev parameters.

    Args:
        policy: any Policy whose ``params`` are trainable
        train: training scenarios
        dev: early-stopping scenarios
        instance: problem definition
        cfg: hyperparameters
        shuffle_seed: seed of the epoch permutation stream
        progress_path: append-only CSV receiving one row per epoch

    Returns:
        tuple: (ParamSet holding the best-dev parameters, RunRecord)
    """
    if len(train) == 0 or len(dev) == 0:
        raise ValueError('training needs nonempty train and dev sets')
    if cfg.batch_size > len(train):
        raise ValueError(f'batch_size {cfg.batch_size} exceeds the {len(train)} training scenarios')

    record = RunRecord(fingerprint=fingerprint, seeds=dict(seeds or {}))
    optimizer = Adam(policy.params, cfg.learning_rate, cfg.betas, cfg.eps)
    shuffler = np.random.default_rng(shuffle_seed)
    best = policy.params.snapshot()
    started = time.monotonic()
    stale = 0
    steps = 0
    epoch = 0
    stop_reason = ''

    while not stop_reason:
        epoch += 1
        order = shuffler.permutation(len(train))
        weighted_loss = 0.0
        seen = 0
        for start in range(0, len(train), cfg.batch_size):
            index = order[start:start + cfg.batch_size]
            loss, grads = batch_gradient(
                policy, train.subset(index), instance, cfg.train_horizon,
                cfg.shard_size, cfg.parallelism, cfg.detach_periods,
            )
            bad = _nonfinite(grads)
            if not np.isfinite(loss) or bad:
                raise DivergenceError(
                    f'non-finite training signal at epoch {epoch}, step {steps + 1}: '
                    f'loss={loss!r}, non-finite gradients in {bad or "none"}'
                )
            optimizer.step(grads)
            steps += 1
            weighted_loss += loss * len(index)
            seen += len(index)
            if steps >= cfg.max_gradient_steps:
                stop_reason = 'max_gradient_steps'
                break

        if epoch >= cfg.max_epochs and not stop_reason:
            stop_reason = 'max_epochs'
        dev_loss = None
        if epoch % cfg.evaluate_every == 0 or stop_reason:
            dev_loss = evaluate(policy, dev, instance, cfg.dev_horizon, parallelism=cfg.parallelism)
            if not np.isfinite(dev_loss):
                raise DivergenceError(f'non-finite dev loss at epoch {epoch}')
            if dev_loss < record.best_dev_loss:
                record.best_dev_loss = dev_loss
                record.best_epoch = epoch
                best = policy.params.snapshot()
                stale = 0
            else:
                stale += cfg.evaluate_every
        if cfg.patience is not None and stale >= cfg.patience and not stop_reason:
            stop_reason = 'patience'

        row = EpochRecord(epoch, weighted_loss / seen, dev_loss, steps, time.monotonic() - started)
        record.epochs.append(row)
        if progress_path is not None:
            append_progress(progress_path, row)
        logger.info(
            'epoch %d steps %d train %.6f dev %s',
            epoch, steps, row.train_loss, 'n/a' if dev_loss is None else f'{dev_loss:.6f}',
        )

    policy.params.assign(best)
    record.gradient_steps = steps
    record.stop_reason = stop_reason
    record.seconds = time.monotonic() - started
    return policy.params, record
