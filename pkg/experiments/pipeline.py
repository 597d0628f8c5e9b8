"""
The work behind the management commands, kept free of argument parsing
so tests and other commands can call it directly.
"""
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from envsim.models import ProblemInstance, ScenarioBatch
from envsim.simulator import initialize, location_means
from experiments.config import ConfigError, ExperimentConfig
from experiments.runs import RunDirectory, traces_path
from hdlab.hashing import plain
from nvsuite.forecaster import QuantileForecaster, make_samples
from nvsuite.suite import assign_meta_primitives, build_nv_batch, nv_instance, run_suite, stockout_buckets
from oracles.basestock import (
    BaseStockPolicy, EchelonPolicy, cbs_plugged, cbs_search, echelon_search, newsvendor_level, simulate,
)
from oracles.cache import OracleCache
from oracles.dp import dp_lost_demand
from oracles.transshipment import relaxed_cost, transshipment_bound
from policies.base import StateLayout
from policies.checkpoints import load_checkpoint, save_checkpoint
from policies.serial import SerialPolicy
from policies.symmetry import SymmetryAwarePolicy
from policies.vanilla import VanillaPolicy
from scenarios.generators import derived_rng, generate, sample_primitives, synthetic_sales
from scenarios.ingest import ingest_csv
from scenarios.store import SPLITS, TraceStore
from theory.experiment import GapTable, gap_scaling_experiment, homogeneous_family
from trainer.config import TrainConfig
from trainer.hdpo import RunRecord, evaluate, gap_percent, hdpo_train

logger = logging.getLogger(__name__)

SCENARIO_ORACLES = ('newsvendor', 'cbs', 'echelon')
ORACLE_CACHE = 'oracle_cache.json'


# Datasets

def split_counts(total: int, fractions) -> Dict[str, int]:
    train = int(math.floor(total * fractions[0]))
    dev = int(math.floor(total * fractions[1]))
    return {'train': train, 'dev': dev, 'test': total - train - dev}


def build_dataset(config: ExperimentConfig, workdir: Path, parallelism: int = 1) -> TraceStore:
    """Traces for ``config.data`` with train, dev and test splits assigned."""
    data, seed = config.data, config.seeds.data
    if data.source == 'synthetic':
        instance = config.require('instance', 'datagen')
        demand = config.require('demand', 'datagen')
        counts = data.counts
        store = generate(
            demand, data.periods, instance.store_count, sum(counts.values()), seed,
            allow_negative=data.allow_negative or instance.allow_negative_demand, parallelism=parallelism,
        )
        if data.primitives is not None:
            underage, lead_times = sample_primitives(data.primitives, len(store), derived_rng(seed, 'primitives'))
            store = replace(
                store, underage=underage, lead_times=lead_times,
                provenance=dict(store.provenance, primitives=asdict(data.primitives)),
            )
        return store.assign_splits(counts)

    if data.source == 'csv':
        store = ingest_csv(Path(data.path), data.ingest)
    else:
        sales = Path(workdir) / 'sales.csv'
        synthetic_sales(data.sales_traces, data.sales_weeks, seed).to_csv(sales, index=False)
        store = ingest_csv(sales, data.ingest)
        provenance = dict(store.provenance, source='synthetic_sales', path=sales.name,
                          traces=data.sales_traces, weeks=data.sales_weeks, seed=seed)
        store = replace(store, provenance=provenance)
    return store.assign_splits(split_counts(len(store), data.split_fractions))


def load_dataset(config: ExperimentConfig, out: Optional[str] = None) -> TraceStore:
    path = traces_path(config, out)
    if not path.exists():
        raise FileNotFoundError(f'no dataset at {path}; run datagen with this config first')
    return TraceStore.load(path)


def scenario_batches(config: ExperimentConfig, store: TraceStore, instance: ProblemInstance) -> Dict[str, ScenarioBatch]:
    """
    One batch per split; initial states are drawn around the train-set mean
    demand. With per-scenario lead times every pipeline is padded to the
    longest lead time in the store so all splits share one state layout.
    """
    means = location_means(store.split('train').demand)
    slots = None if store.lead_times is None else int(store.lead_times.max()) - 1
    batches = {}
    for label in SPLITS:
        if label not in store.splits:
            continue
        part = store.split(label)
        rng = derived_rng(config.seeds.init, label)
        initial = initialize(instance, config.data.init_mode, means, rng, len(part), lead_times=part.lead_times)
        if slots is not None and slots > initial.pipeline.shape[2]:
            padding = np.zeros(initial.pipeline.shape[:2] + (slots - initial.pipeline.shape[2],))
            initial.pipeline = np.concatenate([padding, initial.pipeline], axis=2)
        batches[label] = part.to_batch(initial)
    return batches


# Policies

def store_statistics(demand: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    means = location_means(demand)
    stds = np.asarray(demand, dtype=np.float64).std(axis=(0, 1))
    return means, np.where(means > 0, stds / np.where(means > 0, means, 1.0), 0.0)


def build_policy(config: ExperimentConfig, instance: ProblemInstance, batch: ScenarioBatch, label: str = 'policy'):
    """A freshly initialized policy of ``config.architecture`` sized for ``batch``."""
    arch = config.architecture
    layout = StateLayout.from_batch(batch)
    means, cvs = store_statistics(batch.demand)
    rng = derived_rng(config.seeds.init, label)
    if arch.kind == 'symmetry_aware':
        return SymmetryAwarePolicy(
            instance, layout, means, cvs, rng, arch.context_dim,
            arch.context_hidden, arch.warehouse_hidden, arch.store_hidden,
        )
    policy_class = SerialPolicy if arch.kind == 'serial' else VanillaPolicy
    return policy_class(
        instance, layout, means, rng, arch.hidden, arch.feasibility,
        include_primitives=arch.include_primitives, include_covariates=arch.include_covariates,
    )


def fitted(cfg: TrainConfig, count: int) -> TrainConfig:
    """``cfg`` with the batch size cut down to ``count`` scenarios when it is larger."""
    if cfg.batch_size <= count:
        return cfg
    logger.warning('batch size %d exceeds the %d training scenarios; using %d', cfg.batch_size, count, count)
    return replace(cfg, batch_size=count)


def train_policy(config: ExperimentConfig, batches: Dict[str, ScenarioBatch], instance: ProblemInstance,
                 run: Optional[RunDirectory] = None):
    """
    HDPO on the train split with early stopping on dev.

    Returns:
        tuple: (policy holding its best-dev parameters, RunRecord)
    """
    policy = build_policy(config, instance, batches['train'])
    cfg = fitted(config.train, len(batches['train']))
    _, record = hdpo_train(
        policy, batches['train'], batches['dev'], instance, cfg,
        shuffle_seed=config.seeds.shuffle,
        progress_path=None if run is None else run.file('progress.csv'),
        fingerprint=config.fingerprint,
        seeds=asdict(config.seeds),
    )
    return policy, record


def save_policy(policy, config: ExperimentConfig, path: Path) -> Path:
    return save_checkpoint(path, dict(policy.params.items()), config.fingerprint, plain({'policy': policy.describe()}))


def load_policy(config: ExperimentConfig, instance: ProblemInstance, batch: ScenarioBatch, path: Path):
    """
    Rebuild the configured architecture and load the checkpointed parameters
    into it. ``batch`` must be the train split the policy was sized on.
    """
    arrays, header = load_checkpoint(path)
    if header.get('fingerprint') != config.fingerprint:
        raise ValueError(f'{path} was trained under config {str(header.get("fingerprint"))[:12]}, '
                         f'not {config.short_fingerprint}')
    policy = build_policy(config, instance, batch)
    missing = set(policy.params.names) ^ set(arrays)
    if missing:
        raise ValueError(f'{path} does not match the configured architecture (arrays {sorted(missing)})')
    policy.params.assign(arrays)
    return policy


def test_metrics(config: ExperimentConfig, policy, batches: Dict[str, ScenarioBatch], instance: ProblemInstance) -> dict:
    horizon, parallelism = config.train.test_horizon, config.train.parallelism
    metrics = {'test_cost': evaluate(policy, batches['test'], instance, horizon, parallelism=parallelism)}
    if config.oracle.round_actions:
        metrics['test_cost_rounded'] = evaluate(
            policy, batches['test'], instance, horizon, round_actions=True, parallelism=parallelism,
        )
    return metrics


# Oracles

def oracle_cache(config: ExperimentConfig, out: Optional[str] = None) -> OracleCache:
    return OracleCache(config.output_root(out) / ORACLE_CACHE)


def oracle_inputs(config: ExperimentConfig) -> dict:
    spec = asdict(config.oracle)
    spec.pop('gap_threshold')
    inputs = {
        'instance': config.instance.to_dict(),
        'demand': None if config.demand is None else config.demand.to_dict(),
        'oracle': spec,
    }
    if config.oracle.kind in SCENARIO_ORACLES:
        inputs.update({
            'data': asdict(config.data),
            'seeds': asdict(config.seeds),
            'horizons': {name: asdict(getattr(config.train, name)) for name in ('train_horizon', 'dev_horizon', 'test_horizon')},
        })
    return plain(inputs)


def _single_costs(instance: ProblemInstance) -> Tuple[float, float, int]:
    return float(instance.underage[0]), float(instance.holding[0]), int(instance.lead_times[0])


def compute_oracle(config: ExperimentConfig, batches: Optional[Dict[str, ScenarioBatch]] = None,
                   cache: Optional[OracleCache] = None) -> dict:
    """
    Cost per store-period of the configured oracle, with whatever the oracle
    reports about itself. Results are cached by their inputs when ``cache``
    is given.
    """
    instance = config.require('instance', 'an oracle')
    kind = config.oracle.kind
    if kind is None:
        raise ConfigError('oracle.kind', 'required to compute an oracle')
    if kind in SCENARIO_ORACLES and batches is None:
        raise ValueError(f'the {kind} oracle is simulated and needs scenario batches')
    if kind != 'transshipment' and config.data.primitives is not None:
        raise ConfigError('oracle.kind', f'the {kind} oracle needs fixed primitives; unset data.primitives')

    def compute() -> dict:
        result = ORACLES[kind](config, batches)
        logger.info('%s oracle cost %.6f', kind, result['cost'])
        return result

    if cache is None:
        return plain(compute())
    return cache.fetch(kind, oracle_inputs(config), compute)


def _newsvendor(config, batches):
    p, h, lead = _single_costs(config.instance)
    level = newsvendor_level(config.demand, p, h, lead, seed=config.seeds.data)
    summary = simulate(BaseStockPolicy(level), batches['test'], config.instance, config.train.test_horizon,
                       parallelism=config.train.parallelism)
    return {'cost': summary.mean, 'stderr': summary.stderr, 'level': level}


def _dp(config, batches):
    p, h, lead = _single_costs(config.instance)
    result = dp_lost_demand(config.demand.mean[0], p, h, lead, truncation=config.oracle.truncation)
    return dict(result.to_dict(), cost=result.average_cost)


def _cbs(config, batches):
    spec, parallelism = config.oracle, config.train.parallelism
    searched = None
    level, cap = spec.level, spec.cap
    if level is None or cap is None:
        searched = cbs_search(config.instance, batches['dev'], config.train.dev_horizon, parallelism=parallelism)
        level, cap = searched.level, searched.cap
    result = cbs_plugged(config.instance, batches['test'], config.train.test_horizon, level, cap, parallelism)
    payload = result.to_dict()
    if searched is not None:
        payload.update(source='searched', evaluations=searched.evaluations, dev_cost=searched.cost)
    return payload


def _echelon(config, batches):
    spec, parallelism = config.oracle, config.train.parallelism
    found = echelon_search(
        config.instance, batches['train'], batches['dev'], config.train.train_horizon,
        spec.starts, spec.max_steps, spec.learning_rate, seed=config.seeds.shuffle, parallelism=parallelism,
    )
    summary = simulate(EchelonPolicy(found.levels), batches['test'], config.instance, config.train.test_horizon,
                       parallelism=parallelism)
    return dict(found.to_dict(), cost=summary.mean, stderr=summary.stderr, dev_cost=found.cost)


def _transshipment(config, batches):
    instance, demand = config.instance, config.demand
    if np.ptp(instance.underage) > 0 or np.ptp(instance.holding) > 0 or np.ptp(instance.lead_times) > 0:
        raise ConfigError('instance', 'the transshipment bound needs identical store costs and lead times')
    stores = instance.store_count
    p, h, lead = _single_costs(instance)
    means, covariance = demand.per_store(demand.mean, stores), demand.covariance(stores)
    bound = transshipment_bound(stores, p, h, instance.warehouse_lead_time, lead, means, covariance)
    check = relaxed_cost(bound, p, h, instance.warehouse_lead_time, lead, means, covariance,
                         derived_rng(config.seeds.data, 'relaxed'), config.oracle.samples)
    return dict(bound.to_dict(), cost=bound.lower_bound, relaxed_mean=check.mean, relaxed_stderr=check.stderr)


ORACLES = {
    'newsvendor': _newsvendor,
    'dp': _dp,
    'cbs': _cbs,
    'echelon': _echelon,
    'transshipment': _transshipment,
}


# Benchmark grid

@dataclass
class BenchResult:
    runs: pd.DataFrame
    summary: pd.DataFrame
    records: Dict[str, dict] = field(default_factory=dict)


def combo_label(learning_rate: float, depth: int, batch_size: int) -> str:
    return f'lr={learning_rate:g} layers={depth} batch={batch_size}'


def bench_instances(config: ExperimentConfig):
    base = config.require('instance', 'bench')
    if base.topology != 'single_store':
        raise ConfigError('instance.topology', 'the benchmark grid varies single-store costs and lead times')
    for underage, lead_time in product(config.bench.underages, config.bench.lead_times):
        instance = ProblemInstance(**dict(base.to_dict(), underage=[underage], lead_times=[lead_time]))
        yield underage, lead_time, replace(config, instance=instance)


def summarize_bench(runs: pd.DataFrame, solved_gap: float) -> pd.DataFrame:
    """
    One column per hyperparameter combination with its average gap, worst
    gap and number of instances solved, in grid order.
    """
    grouped = runs.groupby('combo', sort=False)
    table = pd.DataFrame({
        'Average opt. gap (%)': grouped['gap'].mean(),
        'Max opt. gap (%)': grouped['gap'].max(),
        'Instances solved (#)': grouped['gap'].apply(lambda gaps: int((gaps < solved_gap).sum())),
        'Rounding change (mean)': grouped['rounding'].mean(),
    }).T
    table.index.name = 'metric'
    return table.reset_index()


def run_bench(config: ExperimentConfig, store: TraceStore, cache: Optional[OracleCache] = None) -> BenchResult:
    """
    Train every hyperparameter combination on every instance of the grid and
    score it, with rounded actions, against the instance's oracle.
    """
    if config.oracle.kind is None:
        raise ConfigError('oracle.kind', 'the benchmark measures gaps and needs an oracle')
    bench = config.bench
    rows, records = [], {}
    for underage, lead_time, instance_config in bench_instances(config):
        instance = instance_config.instance
        batches = scenario_batches(instance_config, store, instance)
        oracle = compute_oracle(instance_config, batches, cache)
        for learning_rate, depth, batch_size in product(bench.learning_rates, bench.depths, bench.batch_sizes):
            label = combo_label(learning_rate, depth, batch_size)
            combo = replace(
                instance_config,
                architecture=replace(instance_config.architecture, hidden=(bench.width,) * depth),
                train=replace(instance_config.train, learning_rate=learning_rate, batch_size=batch_size),
            )
            policy, record = train_policy(combo, batches, instance)
            metrics = test_metrics(replace(combo, oracle=replace(combo.oracle, round_actions=True)),
                                   policy, batches, instance)
            gap = gap_percent(metrics['test_cost_rounded'], oracle['cost'])
            logger.info('p=%g L=%d %s: gap %.3f%%', underage, lead_time, label, gap)
            rows.append({
                'underage': underage,
                'lead_time': lead_time,
                'combo': label,
                'learning_rate': learning_rate,
                'hidden_layers': depth,
                'batch_size': batch_size,
                'oracle_cost': oracle['cost'],
                'cost': metrics['test_cost'],
                'cost_rounded': metrics['test_cost_rounded'],
                'rounding': metrics['test_cost_rounded'] - metrics['test_cost'],
                'gap': gap,
                'solved': gap < bench.solved_gap,
                'best_dev_loss': record.best_dev_loss,
                'gradient_steps': record.gradient_steps,
            })
            records[f'p={underage:g} L={lead_time} {label}'] = record.deterministic_dict()
    runs = pd.DataFrame(rows)
    return BenchResult(runs, summarize_bench(runs, bench.solved_gap), records)


# Theory

def run_theory(config: ExperimentConfig, parallelism: Optional[int] = None) -> GapTable:
    spec = config.theory
    return gap_scaling_experiment(
        homogeneous_family(**spec.family()), spec.store_counts, spec.scenarios, spec.periods,
        seed=config.seeds.data, burn_in=spec.burn_in, parallelism=parallelism,
    )


# Forecast-driven newsvendor suite

@dataclass
class ForecastResult:
    summary: pd.DataFrame
    calibration: pd.DataFrame
    loss_ratio: Dict[int, float]
    frames: Dict[str, pd.DataFrame]
    fit: dict
    records: Dict[str, dict]
    best: str


def run_forecast(config: ExperimentConfig, store: TraceStore, run: RunDirectory) -> ForecastResult:
    """
    Fit the quantile forecaster on the train traces, then train and score
    the generalized-newsvendor family and the end-to-end policy on top of it.
    """
    spec, seeds = config.forecast, config.seeds
    store = assign_meta_primitives(store, spec.underage_hat, derived_rng(seeds.data, 'meta-primitives'),
                                   spec.lead_times, spec.spread)
    parts = {label: store.split(label) for label in SPLITS}
    forecaster = QuantileForecaster(derived_rng(seeds.init, 'forecaster'), hidden=spec.hidden)
    samples = {label: make_samples(part.demand, part.covariates, forecaster.window, forecaster.horizons)
               for label, part in parts.items()}
    fit = forecaster.fit(
        samples['train'], samples['dev'], spec.batch_size, spec.learning_rate, spec.max_steps,
        spec.evaluate_every, spec.patience, seed=seeds.shuffle,
    )
    forecaster.save(run.file('forecaster.bin'), config.fingerprint)
    calibration = pd.DataFrame(
        forecaster.calibration(samples['test']),
        index=pd.Index(forecaster.quantiles, name='quantile'),
        columns=[f'horizon_{m}' for m in forecaster.horizons],
    ).reset_index()
    ratios = dict(zip(forecaster.horizons, forecaster.loss_ratio(samples['test']).tolist()))

    instance = nv_instance(spec.mode, spec.underage_hat, spec.holding, max(spec.lead_times))
    batches = {
        label: build_nv_batch(part, instance, derived_rng(seeds.init, label), forecaster.window,
                              config.data.init_mode, max_lead=max(spec.lead_times))
        for label, part in parts.items()
    }
    suite = run_suite(
        forecaster, batches['train'], batches['dev'], batches['test'], instance,
        fitted(config.train, len(batches['train'])), seed=seeds.shuffle, kinds=spec.kinds,
        end_to_end=spec.end_to_end, hidden=spec.policy_hidden, warmup=forecaster.window,
    )
    records = {name: RunRecord.from_dict(record).deterministic_dict() for name, record in suite.records.items()}
    return ForecastResult(
        summary=suite.summary(),
        calibration=calibration,
        loss_ratio=ratios,
        frames=suite.frames,
        fit=fit.to_dict(),
        records=records,
        best=suite.best_newsvendor().name,
    )


def write_forecast(result: ForecastResult, run: RunDirectory) -> None:
    run.write_frame(result.summary, 'summary.csv')
    run.write_frame(result.calibration, 'calibration.csv')
    for name, frame in result.frames.items():
        run.write_frame(frame, f'implied_{name}.csv')
        run.write_frame(stockout_buckets(frame), f'stockouts_{name}.csv')
