"""
TraceStore: demand traces, optional per-scenario primitives and covariates,
and the train/dev/test split labels, persisted as one binary container plus
a provenance JSON.
"""
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional

import numpy as np

from envsim.models import InitialState, ScenarioBatch
from hdlab.containers import read_arrays, write_arrays

FORMAT = 'hdlab-traces/1'
SPLITS = ('train', 'dev', 'test')
OPTIONAL_ARRAYS = ('underage', 'lead_times', 'covariates')


@dataclass
class TraceStore:
    """
    H demand traces of T periods for K locations, held as (H, T, K).

    ``splits`` maps a label to the half-open scenario range it owns; ranges
    never overlap.
    """

    demand: np.ndarray
    underage: Optional[np.ndarray] = None
    lead_times: Optional[np.ndarray] = None
    covariates: Optional[np.ndarray] = None
    ids: Optional[List[str]] = None
    weeks: Optional[List[str]] = None
    splits: Dict[str, List[int]] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.demand.shape[0])

    @property
    def periods(self) -> int:
        return int(self.demand.shape[1])

    @property
    def stores(self) -> int:
        return int(self.demand.shape[2])

    def assign_splits(self, counts: Mapping[str, int]) -> 'TraceStore':
        """Give consecutive scenario ranges to train, dev and test, in that order."""
        unknown = set(counts) - set(SPLITS)
        if unknown:
            raise ValueError(f'unknown split labels {sorted(unknown)}; expected {SPLITS}')
        if sum(counts.values()) > len(self):
            raise ValueError(f'splits ask for {sum(counts.values())} scenarios, only {len(self)} exist')
        splits, start = {}, 0
        for label in SPLITS:
            count = int(counts.get(label, 0))
            if count:
                splits[label] = [start, start + count]
                start += count
        self.splits = splits
        return self

    def subset(self, index) -> 'TraceStore':
        index = np.asarray(index)

        def pick(a):
            return None if a is None else a[index]
        return replace(
            self,
            demand=self.demand[index],
            underage=pick(self.underage),
            lead_times=pick(self.lead_times),
            covariates=pick(self.covariates),
            ids=None if self.ids is None else [self.ids[i] for i in index],
            splits={},
        )

    def split(self, label: str) -> 'TraceStore':
        if label not in self.splits:
            raise KeyError(f'no {label!r} split; available: {sorted(self.splits)}')
        start, stop = self.splits[label]
        return self.subset(np.arange(start, stop))

    def periods_slice(self, start: int, stop: Optional[int] = None) -> 'TraceStore':
        """Restrict every trace to periods ``start`` .. ``stop - 1``."""
        stop = self.periods if stop is None else stop
        return replace(
            self,
            demand=self.demand[:, start:stop],
            covariates=None if self.covariates is None else self.covariates[:, start:stop],
            weeks=None if self.weeks is None else self.weeks[start:stop],
        )

    def to_batch(self, initial: InitialState) -> ScenarioBatch:
        if initial.on_hand.shape[0] != len(self):
            raise ValueError(f'{initial.on_hand.shape[0]} initial states for {len(self)} traces')
        return ScenarioBatch(
            demand=self.demand,
            initial=initial,
            underage=self.underage,
            lead_times=self.lead_times,
            covariates=self.covariates,
            ids=self.ids,
        )

    def save(self, path: Path) -> Path:
        """Write the container to ``path`` and the provenance next to it."""
        path = Path(path)
        arrays = {'demand': self.demand}
        for name in OPTIONAL_ARRAYS:
            if getattr(self, name) is not None:
                arrays[name] = getattr(self, name)
        header = {'format': FORMAT, 'ids': self.ids, 'weeks': self.weeks, 'splits': self.splits}
        write_arrays(path, arrays, header)
        provenance_path(path).write_text(json.dumps(self.provenance, indent=2, sort_keys=True, default=str))
        return path

    @classmethod
    def load(cls, path: Path) -> 'TraceStore':
        arrays, header = read_arrays(path, FORMAT)
        provenance = {}
        if provenance_path(path).exists():
            provenance = json.loads(provenance_path(path).read_text())
        lead_times = arrays.get('lead_times')
        return cls(
            demand=arrays['demand'],
            underage=arrays.get('underage'),
            lead_times=None if lead_times is None else lead_times.astype(np.int64),
            covariates=arrays.get('covariates'),
            ids=header.get('ids'),
            weeks=header.get('weeks'),
            splits={label: list(bounds) for label, bounds in header.get('splits', {}).items()},
            provenance=provenance,
        )


def provenance_path(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + '.provenance.json')
