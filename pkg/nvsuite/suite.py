"""
Benchmark plumbing for forecast-driven single-store problems: scenario
batches built from sales traces, downstream training of the newsvendor
family, profit accounting and implied-quantile diagnostics.
"""
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from diffengine import Tape
from envsim.models import ProblemInstance, ScenarioBatch
from envsim.simulator import initialize, rollout
from nvsuite.forecaster import WINDOW, QuantileForecaster
from nvsuite.policies import TRAINABLE_KINDS, DataDrivenPolicy, GNPolicy
from nvsuite.quantiles import inverse_quantiles
from scenarios.store import TraceStore
from trainer.config import Horizon, TrainConfig
from trainer.hdpo import hdpo_train

logger = logging.getLogger(__name__)

META_LEAD_TIMES = (4, 5, 6)
UNDERAGE_SPREAD = 0.3
BUCKET_WIDTH = 0.1


def nv_instance(mode: str, underage: float = 4.0, holding: float = 1.0, lead_time: int = 4) -> ProblemInstance:
    """Single store whose per-scenario underage and lead time come from the traces."""
    return ProblemInstance('single_store', mode, [underage], [holding], [lead_time])


def assign_meta_primitives(
    store: TraceStore,
    underage_hat: float,
    rng: np.random.Generator,
    lead_times: Sequence[int] = META_LEAD_TIMES,
    spread: float = UNDERAGE_SPREAD,
) -> TraceStore:
    """
    Draw per-trace p = p_hat * U(1 - spread, 1 + spread) and L uniform on
    ``lead_times``.
    """
    count = len(store)
    underage = underage_hat * rng.uniform(1.0 - spread, 1.0 + spread, size=(count, 1))
    leads = rng.choice(np.asarray(lead_times, dtype=np.int64), size=(count, 1))
    provenance = dict(store.provenance, underage_hat=underage_hat, lead_time_choices=list(lead_times))
    return replace(store, underage=underage, lead_times=leads, provenance=provenance)


def build_nv_batch(
    store: TraceStore,
    instance: ProblemInstance,
    rng: np.random.Generator,
    window: int = WINDOW,
    mode: str = 'uniform',
    max_lead: Optional[int] = None,
) -> ScenarioBatch:
    """
    Use the first ``window`` periods of every trace as the initial forecast
    window and simulate the rest.

    Initial inventory is drawn around each trace's own window mean. Pass
    ``max_lead`` to pad pipelines to a common width across batches.
    """
    if store.periods <= window:
        raise ValueError(f'traces of {store.periods} periods leave nothing to simulate after a {window}-period window')
    count = len(store)
    history = store.demand[:, :window, :]
    means = np.maximum(history.mean(axis=1), 0.0)
    lead_times = store.lead_times
    if lead_times is None:
        lead_times = np.tile(instance.lead_times, (count, 1))
    initial = initialize(instance, mode, means, rng, count, lead_times=lead_times)
    initial.window = history.transpose(0, 2, 1).copy()
    slots = initial.pipeline.shape[2]
    if max_lead is not None and max_lead - 1 > slots:
        padding = np.zeros((count, initial.pipeline.shape[1], max_lead - 1 - slots))
        initial.pipeline = np.concatenate([padding, initial.pipeline], axis=2)
    covariates = None if store.covariates is None else store.covariates[:, window:]
    return ScenarioBatch(
        demand=store.demand[:, window:],
        initial=initial,
        underage=store.underage,
        lead_times=lead_times,
        covariates=covariates,
        ids=store.ids,
    )


def scored_horizon(batch: ScenarioBatch, warmup: int = WINDOW, periods: Optional[int] = None) -> Horizon:
    periods = batch.horizon if periods is None else periods
    return Horizon(periods, min(warmup, periods - 1))


def _with_warmup(cfg: TrainConfig, warmup: int) -> TrainConfig:
    def stretch(horizon: Horizon) -> Horizon:
        return Horizon(horizon.periods, max(horizon.burn_in, min(warmup, horizon.periods - 1)))
    return replace(
        cfg,
        train_horizon=stretch(cfg.train_horizon),
        dev_horizon=stretch(cfg.dev_horizon),
        test_horizon=stretch(cfg.test_horizon),
        detach_periods=max(cfg.detach_periods, warmup),
    )


def train_downstream(
    policy,
    train: ScenarioBatch,
    dev: ScenarioBatch,
    instance: ProblemInstance,
    cfg: TrainConfig,
    warmup: int = WINDOW,
    shuffle_seed: int = 0,
    **kwargs,
):
    """
    HDPO on a policy that reads a frozen forecaster.

    The first ``warmup`` periods carry no action gradient and are left out
    of train and dev costs.
    """
    if isinstance(policy, GNPolicy) and policy.kind not in TRAINABLE_KINDS:
        raise ValueError(f'{policy.kind} has nothing to train; trainable kinds are {TRAINABLE_KINDS}')
    cfg = _with_warmup(cfg, warmup)
    logger.info('training %s with %d warm-up periods', policy.architecture, warmup)
    return hdpo_train(policy, train, dev, instance, cfg, shuffle_seed=shuffle_seed, **kwargs)


def end_to_end_policy(batch: ScenarioBatch, rng: np.random.Generator, hidden: Sequence[int] = (128, 128)) -> DataDrivenPolicy:
    slots = int(batch.initial.pipeline.shape[2])
    return DataDrivenPolicy(batch.initial.window.shape[-1], slots, slots + 1, rng, hidden)


@dataclass
class PolicyReport:
    name: str
    mean_cost: float
    mean_profit: float
    jit_profit: float
    percent_of_jit: float
    scenario_profit: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop('scenario_profit')
        return data


def evaluate_policy(
    name: str,
    policy,
    batch: ScenarioBatch,
    instance: ProblemInstance,
    horizon: Horizon,
    allow_returns: bool = False,
) -> Tuple[PolicyReport, Dict[str, np.ndarray]]:
    """
    Cost and profit per period over the scored periods, with profit also
    expressed as a percentage of the just-in-time profit (every demand sold,
    nothing held).
    """
    result = rollout(
        policy, batch, instance, horizon.periods, horizon.burn_in,
        tape=Tape(record=False), allow_returns=allow_returns, record=True,
    )
    ledger = result.ledger
    scored = slice(horizon.burn_in, horizon.periods)
    profit = (ledger['revenue'][:, scored] - ledger['holding_cost'][:, scored]).sum(axis=(1, 2))
    underage = batch.primitives(instance).underage[:, :1]
    jit = (ledger['demand'][:, scored, 0] * underage).sum(axis=1)
    periods = horizon.periods - horizon.burn_in
    total_jit = float(jit.sum())
    report = PolicyReport(
        name=name,
        mean_cost=result.mean_cost,
        mean_profit=float(profit.mean() / periods),
        jit_profit=float(jit.mean() / periods),
        percent_of_jit=100.0 * float(profit.sum()) / total_jit if total_jit > 0 else float('nan'),
        scenario_profit=profit / periods,
    )
    logger.info('%s: cost %.4f profit %.4f (%.2f%% of just-in-time)',
                name, report.mean_cost, report.mean_profit, report.percent_of_jit)
    return report, ledger


def forecast_grids(forecaster: QuantileForecaster, batch: ScenarioBatch, periods: int) -> np.ndarray:
    """(H, periods, Q, M) forecasts the policies see at every period."""
    history = batch.initial.window[:, 0, :]
    window = history.shape[1]
    combined = np.concatenate([history, batch.demand[:, :periods, 0]], axis=1)
    windows = np.lib.stride_tricks.sliding_window_view(combined, window, axis=1)[:, :periods]
    days = None
    if batch.covariates is not None:
        days = batch.covariates[:, :periods, 0].reshape(-1)
    grid = forecaster.predict(windows.reshape(-1, window), days)
    return grid.reshape(len(batch), periods, *forecaster.grid_shape)


def implied_quantile_frame(
    ledger: Dict[str, np.ndarray],
    batch: ScenarioBatch,
    instance: ProblemInstance,
    forecaster: QuantileForecaster,
    horizon: Horizon,
) -> pd.DataFrame:
    """
    One row per scenario and scored period: revenue, holding cost, the
    implied quantile of the order-up-to level (0 when nothing was ordered),
    its per-scenario standardization and the stock-out ratio, the unmet
    demand over the next L periods over L times the scenario's mean demand.
    """
    start, stop = horizon.burn_in, horizon.periods
    lead = batch.primitives(instance).lead_times[:, 0]
    grids = forecast_grids(forecaster, batch, stop)[:, start:stop]
    column = forecaster.horizon_index(lead)
    rows = grids[np.arange(len(batch)), :, :, column]

    orders = ledger['orders'][:, start:stop, 0]
    levels = ledger['position'][:, start:stop, 0] + orders
    taus, degenerate = inverse_quantiles(rows.reshape(-1, rows.shape[-1]), levels.reshape(-1), forecaster.quantiles)
    taus = np.where(orders.reshape(-1) > 0, taus, 0.0).reshape(orders.shape)

    demand = ledger['demand'][:, :stop, 0]
    unmet = demand - ledger['sales'][:, :stop, 0]
    cumulative = np.concatenate([np.zeros((len(batch), 1)), np.cumsum(unmet, axis=1)], axis=1)
    mean_demand = demand[:, start:stop].mean(axis=1)
    ratio = np.full(orders.shape, np.nan)
    for i in range(len(batch)):
        ends = np.arange(start, stop) + lead[i]
        inside = ends <= stop
        window_unmet = cumulative[i, ends[inside]] - cumulative[i, np.arange(start, stop)[inside]]
        if mean_demand[i] > 0:
            ratio[i, inside] = window_unmet / (lead[i] * mean_demand[i])

    spread = taus.std(axis=1, keepdims=True)
    standardized = np.where(spread > 0, (taus - taus.mean(axis=1, keepdims=True)) / np.where(spread > 0, spread, 1.0), 0.0)
    ids = batch.ids if batch.ids is not None else [str(i) for i in range(len(batch))]
    periods = stop - start
    return pd.DataFrame({
        'scenario': np.repeat(ids, periods),
        'week': np.tile(np.arange(start, stop), len(batch)),
        'revenue': ledger['revenue'][:, start:stop, 0].reshape(-1),
        'holding_cost': ledger['holding_cost'][:, start:stop, 0].reshape(-1),
        'implied_quantile': taus.reshape(-1),
        'degenerate_forecast': degenerate,
        'standardized_quantile': standardized.reshape(-1),
        'stockout_ratio': ratio.reshape(-1),
    })


def stockout_buckets(frame: pd.DataFrame, width: float = BUCKET_WIDTH) -> pd.DataFrame:
    """Mean stock-out ratio per bucket of the standardized implied quantile."""
    usable = frame.dropna(subset=['stockout_ratio'])
    bucket = np.floor(usable['standardized_quantile'] / width) * width
    return (
        usable.assign(bucket=bucket.round(6))
        .groupby('bucket', as_index=False)
        .agg(stockout_ratio=('stockout_ratio', 'mean'), count=('stockout_ratio', 'size'))
    )


@dataclass
class SuiteResult:
    reports: Dict[str, PolicyReport]
    frames: Dict[str, pd.DataFrame]
    records: dict

    def best_newsvendor(self, admissible_only: bool = True) -> PolicyReport:
        names = [n for n in self.reports if n not in ('just_in_time', 'hdpo_vanilla')]
        if admissible_only:
            names = [n for n in names if n != 'returns_newsvendor']
        return max((self.reports[n] for n in names), key=lambda r: r.mean_profit)

    def summary(self) -> pd.DataFrame:
        return pd.DataFrame([report.to_dict() for report in self.reports.values()])


def run_suite(
    forecaster: QuantileForecaster,
    train: ScenarioBatch,
    dev: ScenarioBatch,
    test: ScenarioBatch,
    instance: ProblemInstance,
    cfg: TrainConfig,
    seed: int = 0,
    kinds: Sequence[str] = ('newsvendor', 'fixed_quantile', 'transformed_newsvendor', 'returns_newsvendor', 'just_in_time'),
    end_to_end: bool = True,
    hidden: Sequence[int] = (128, 128),
    warmup: int = WINDOW,
) -> SuiteResult:
    """
    Train what is trainable, then score every policy on ``test``.

    Just-in-time reads future demand, so every policy is scored on the
    periods that leave it a full lead time of trace.
    """
    lead = test.primitives(instance).lead_times
    horizon = scored_horizon(test, warmup, test.horizon - int(lead.max()))
    reports, frames, records = {}, {}, {}
    rng = np.random.default_rng(seed)
    policies = {kind: GNPolicy(kind, forecaster, rng) for kind in kinds}
    if end_to_end:
        policies['hdpo_vanilla'] = end_to_end_policy(train, rng, hidden)
    for name, policy in policies.items():
        if name == 'hdpo_vanilla' or name in TRAINABLE_KINDS:
            _, record = train_downstream(policy, train, dev, instance, cfg, warmup, shuffle_seed=seed)
            records[name] = record.to_dict()
        report, ledger = evaluate_policy(
            name, policy, test, instance, horizon, allow_returns=name == 'returns_newsvendor',
        )
        reports[name] = report
        if name != 'just_in_time':
            frames[name] = implied_quantile_frame(ledger, test, instance, forecaster, horizon)
    return SuiteResult(reports, frames, records)
