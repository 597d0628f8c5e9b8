"""
Experiment configuration: YAML files validated into frozen dataclasses.

Every section is a dataclass; ``build`` walks the type hints of the target
class, so nested sections, tuples and optional fields are checked with the
dotted path of the offending field in the error.
"""
import logging
import math
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union, get_args, get_origin, get_type_hints

import numpy as np
import yaml
from django.conf import settings

from envsim.models import ProblemInstance
from hdlab.hashing import fingerprint, plain
from scenarios.generators import DemandModel, PrimitiveRanges
from scenarios.ingest import IngestConfig
from trainer.config import TrainConfig

logger = logging.getLogger(__name__)

DATA_SOURCES = ('synthetic', 'csv', 'synthetic_sales')
ARCHITECTURES = ('vanilla', 'symmetry_aware', 'serial')
ORACLE_KINDS = ('newsvendor', 'dp', 'cbs', 'echelon', 'transshipment')
FINGERPRINT_LENGTH = 12


class ConfigError(ValueError):
    """A config field is missing, unknown or malformed."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f'{path}: {message}')


@dataclass(frozen=True)
class DataSpec:
    source: str = 'synthetic'
    periods: int = 550
    train_scenarios: int = 4096
    dev_scenarios: int = 4096
    test_scenarios: int = 4096
    init_mode: str = 'uniform'
    allow_negative: bool = False
    primitives: Optional[PrimitiveRanges] = None
    path: Optional[str] = None
    ingest: IngestConfig = field(default_factory=IngestConfig)
    sales_traces: int = 600
    sales_weeks: int = 130
    split_fractions: Tuple[float, float, float] = (0.5, 0.25, 0.25)

    @property
    def counts(self) -> Dict[str, int]:
        return {'train': self.train_scenarios, 'dev': self.dev_scenarios, 'test': self.test_scenarios}


@dataclass(frozen=True)
class ArchitectureSpec:
    kind: str = 'vanilla'
    hidden: Tuple[int, ...] = (32, 32, 32)
    feasibility: Optional[str] = None
    include_primitives: bool = False
    include_covariates: bool = False
    context_dim: int = 256
    context_hidden: Tuple[int, ...] = (256,)
    warehouse_hidden: Tuple[int, ...] = (16, 16)
    store_hidden: Tuple[int, ...] = (32, 32)


@dataclass(frozen=True)
class OracleSpec:
    """
    ``gap_threshold`` (percent) makes ``eval`` fail when the policy is
    further than that from the oracle.
    """

    kind: Optional[str] = None
    gap_threshold: Optional[float] = None
    level: Optional[float] = None
    cap: Optional[float] = None
    starts: int = 3
    max_steps: int = 300
    learning_rate: float = 0.5
    samples: int = 200_000
    truncation: Optional[int] = None
    round_actions: bool = True


@dataclass(frozen=True)
class SeedSpec:
    data: int = 0
    init: int = 1
    shuffle: int = 2


@dataclass(frozen=True)
class BenchSpec:
    learning_rates: Tuple[float, ...] = (1e-4, 1e-3, 1e-2)
    depths: Tuple[int, ...] = (2, 3)
    width: int = 32
    batch_sizes: Tuple[int, ...] = (1024, 8192)
    underages: Tuple[float, ...] = (4.0, 9.0, 19.0, 39.0)
    lead_times: Tuple[int, ...] = (1, 2, 3, 4)
    solved_gap: float = 0.25


@dataclass(frozen=True)
class TheorySpec:
    gamma_high: float = 1.5
    gamma_low: float = 1.0
    q: float = 0.5
    lower: float = 10.0
    upper: float = 12.0
    underage: float = 4.0
    holding: float = 1.0
    warehouse_holding: float = 0.5
    store_counts: Tuple[int, ...] = (4, 16, 64, 256)
    scenarios: int = 1000
    periods: int = 100
    burn_in: int = 0

    def family(self) -> dict:
        return {name: getattr(self, name) for name in (
            'gamma_high', 'gamma_low', 'q', 'lower', 'upper', 'underage', 'holding', 'warehouse_holding',
        )}


@dataclass(frozen=True)
class ForecastSpec:
    mode: str = 'lost'
    underage_hat: float = 4.0
    holding: float = 1.0
    lead_times: Tuple[int, ...] = (4, 5, 6)
    spread: float = 0.3
    hidden: Tuple[int, ...] = (128, 128)
    batch_size: int = 1024
    learning_rate: float = 1e-3
    max_steps: int = 2000
    evaluate_every: int = 100
    patience: Optional[int] = None
    policy_hidden: Tuple[int, ...] = (128, 128)
    kinds: Tuple[str, ...] = (
        'newsvendor', 'fixed_quantile', 'transformed_newsvendor', 'returns_newsvendor', 'just_in_time',
    )
    end_to_end: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    instance: Optional[ProblemInstance] = None
    demand: Optional[DemandModel] = None
    data: DataSpec = field(default_factory=DataSpec)
    architecture: ArchitectureSpec = field(default_factory=ArchitectureSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    oracle: OracleSpec = field(default_factory=OracleSpec)
    seeds: SeedSpec = field(default_factory=SeedSpec)
    bench: BenchSpec = field(default_factory=BenchSpec)
    theory: TheorySpec = field(default_factory=TheorySpec)
    forecast: ForecastSpec = field(default_factory=ForecastSpec)
    out: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.name or '/' in self.name:
            raise ConfigError('name', f'must be a nonempty directory name, got {self.name!r}')
        if self.data.source not in DATA_SOURCES:
            raise ConfigError('data.source', f'must be one of {DATA_SOURCES}, got {self.data.source!r}')
        if self.data.source == 'csv' and not self.data.path:
            raise ConfigError('data.path', 'required when data.source is csv')
        if self.architecture.kind not in ARCHITECTURES:
            raise ConfigError('architecture.kind', f'must be one of {ARCHITECTURES}, got {self.architecture.kind!r}')
        if self.oracle.kind is not None and self.oracle.kind not in ORACLE_KINDS:
            raise ConfigError('oracle.kind', f'must be one of {ORACLE_KINDS}, got {self.oracle.kind!r}')
        if self.oracle.gap_threshold is not None and self.oracle.kind is None:
            raise ConfigError('oracle.gap_threshold', 'a gap threshold needs an oracle.kind to measure the gap against')
        if self.data.primitives is not None and self.instance is not None and self.instance.topology != 'single_store':
            raise ConfigError('data.primitives', 'per-scenario primitives are drawn for single-store instances only')
        if self.instance is not None and self.oracle.kind is not None:
            self._check_oracle_topology()
        if abs(sum(self.data.split_fractions) - 1.0) > 1e-9:
            raise ConfigError('data.split_fractions', 'must sum to 1')

    def _check_oracle_topology(self) -> None:
        instance, kind = self.instance, self.oracle.kind
        supported = {
            'newsvendor': instance.topology == 'single_store' and instance.mode == 'backlogged',
            'dp': instance.topology == 'single_store' and instance.mode == 'lost',
            'cbs': instance.topology == 'single_store' and instance.mode == 'lost',
            'echelon': instance.topology == 'serial',
            'transshipment': instance.topology == 'transshipment',
        }
        if not supported[kind]:
            raise ConfigError(
                'oracle.kind', f'no {kind} oracle for a {instance.mode} {instance.topology} instance',
            )
        if kind == 'dp' and (self.demand is None or self.demand.kind != 'poisson'):
            raise ConfigError('demand.kind', 'the dp oracle needs Poisson demand')
        if kind == 'transshipment' and (self.demand is None or self.demand.kind != 'corr_normal'):
            raise ConfigError('demand.kind', 'the transshipment bound needs corr_normal demand')

    def require(self, section: str, command: str):
        value = getattr(self, section)
        if value is None:
            raise ConfigError(section, f'required by {command}')
        return value

    def to_dict(self) -> dict:
        data = plain(asdict(self))
        data.pop('out')
        return data

    def canonical(self) -> dict:
        """What the results depend on: neither the output root nor the shard parallelism."""
        data = self.to_dict()
        data['train'].pop('parallelism')
        return data

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.canonical())

    @property
    def short_fingerprint(self) -> str:
        return self.fingerprint[:FINGERPRINT_LENGTH]

    def with_seed(self, seed: Optional[int]) -> 'ExperimentConfig':
        """Every seed replaced by ``seed``, or unchanged when it is None."""
        if seed is None:
            return self
        return replace(self, seeds=SeedSpec(seed, seed, seed))

    def with_parallelism(self, parallelism: Optional[int]) -> 'ExperimentConfig':
        if parallelism is None:
            return self
        return replace(self, train=replace(self.train, parallelism=parallelism))

    def output_root(self, override: Optional[str] = None) -> Path:
        return Path(override or self.out or settings.HDLAB_OUT)

    def run_root(self, override: Optional[str] = None) -> Path:
        return self.output_root(override) / self.name / self.short_fingerprint

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)


def _is_optional(hint) -> bool:
    return get_origin(hint) is Union and type(None) in get_args(hint)


def _number(value, path: str, integral: bool):
    if isinstance(value, bool):
        raise ConfigError(path, f'expected a number, got {value!r}')
    if isinstance(value, str) and not integral:
        # YAML 1.1 reads 1e-4 and inf as strings
        try:
            return float(value)
        except ValueError:
            raise ConfigError(path, f'expected a number, got {value!r}') from None
    if not isinstance(value, (int, float)):
        raise ConfigError(path, f'expected a number, got {value!r}')
    if integral:
        if isinstance(value, float) and (not math.isfinite(value) or not value.is_integer()):
            raise ConfigError(path, f'expected an integer, got {value!r}')
        return int(value)
    return float(value)


def _convert(hint, value, path: str):
    if hint is Any:
        return value
    if _is_optional(hint):
        if value is None:
            return None
        inner = [arg for arg in get_args(hint) if arg is not type(None)]
        return _convert(inner[0], value, path)
    if value is None:
        raise ConfigError(path, 'may not be null')
    if is_dataclass(hint):
        return build(hint, value, path)
    if hint is np.ndarray:
        try:
            array = np.asarray(value, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ConfigError(path, f'expected numbers, got {value!r}') from exc
        return array
    origin, args = get_origin(hint), get_args(hint)
    if origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            value = [value]
        if origin is tuple and args and args[-1] is not Ellipsis:
            if len(value) != len(args):
                raise ConfigError(path, f'expected {len(args)} entries, got {len(value)}')
            items = [_convert(arg, v, f'{path}[{i}]') for i, (arg, v) in enumerate(zip(args, value))]
        else:
            item_hint = args[0] if args else Any
            items = [_convert(item_hint, v, f'{path}[{i}]') for i, v in enumerate(value)]
        return tuple(items) if origin is tuple else items
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(path, f'expected a mapping, got {value!r}')
        return {str(k): _convert(args[1] if args else Any, v, f'{path}.{k}') for k, v in value.items()}
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f'expected true or false, got {value!r}')
        return value
    if hint is int:
        return _number(value, path, integral=True)
    if hint is float:
        return _number(value, path, integral=False)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(path, f'expected a string, got {value!r}')
        return value
    return value


def build(cls, data, path: str = ''):
    """
    Instantiate dataclass ``cls`` from a mapping, recursing into fields.

    Constructor checks that raise ValueError are re-raised as ConfigError
    at ``path``.
    """
    where = path or cls.__name__
    if not isinstance(data, dict):
        raise ConfigError(where, f'expected a mapping, got {type(data).__name__}')
    hints = get_type_hints(cls)
    known = {f.name: f for f in fields(cls) if f.init}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f'{path}.{unknown[0]}' if path else unknown[0], 'unknown field')
    kwargs = {}
    for name, spec in known.items():
        dotted = f'{path}.{name}' if path else name
        if name not in data:
            if spec.default is MISSING and spec.default_factory is MISSING:
                raise ConfigError(dotted, 'missing required field')
            continue
        kwargs[name] = _convert(hints[name], data[name], dotted)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(where, str(exc)) from exc


def parse_config(data: dict) -> ExperimentConfig:
    return build(ExperimentConfig, data)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError('config', f'cannot read {path}: {exc}') from exc
    except yaml.YAMLError as exc:
        raise ConfigError('config', f'{path} is not valid YAML: {exc}') from exc
    config = parse_config(data or {})
    logger.info('loaded %s from %s (fingerprint %s)', config.name, path, config.short_fingerprint)
    return config
