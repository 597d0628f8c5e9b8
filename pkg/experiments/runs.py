"""
Run directories: ``<out>/<config name>/<fingerprint[:12]>/<command>/``.
"""
import json
import logging
import shutil
from pathlib import Path
from typing import Iterable, Mapping, Optional, Tuple

import pandas as pd

from experiments.config import ExperimentConfig
from hdlab.hashing import plain

logger = logging.getLogger(__name__)

TRACES = 'traces.bin'


class RunExistsError(FileExistsError):
    """The command already wrote to this run directory."""


class RunDirectory:
    def __init__(self, config: ExperimentConfig, command: str, out: Optional[str] = None):
        self.config = config
        self.command = command
        self.root = config.run_root(out)
        self.path = self.root / command

    def claim(self, force: bool = False) -> 'RunDirectory':
        """
        Make the directory ready for a fresh run. An earlier run is only
        removed when ``force`` is set.
        """
        if self.path.exists() and any(self.path.iterdir()):
            if not force:
                raise RunExistsError(f'{self.path} already holds a {self.command} run; pass --force to overwrite')
            logger.warning('removing earlier %s run in %s', self.command, self.path)
            shutil.rmtree(self.path)
        self.path.mkdir(parents=True, exist_ok=True)
        (self.root / 'config.yaml').write_text(self.config.to_yaml())
        return self

    def file(self, name: str) -> Path:
        return self.path / name

    def sibling(self, command: str, name: str) -> Path:
        """A file written by another command of the same run."""
        return self.root / command / name

    def write_json(self, name: str, payload) -> Path:
        path = self.file(name)
        path.write_text(json.dumps(plain(payload), indent=2, sort_keys=True))
        return path

    def write_metrics(self, metrics: Mapping[str, float], name: str = 'metrics.csv') -> Path:
        rows = sorted(metrics.items())
        return self.write_frame(pd.DataFrame(rows, columns=['metric', 'value']), name)

    def write_frame(self, frame: pd.DataFrame, name: str) -> Path:
        path = self.file(name)
        frame.to_csv(path, index=False)
        return path


def traces_path(config: ExperimentConfig, out: Optional[str] = None) -> Path:
    return config.run_root(out) / 'datagen' / TRACES


def flatten(prefix: str, values: Mapping) -> Iterable[Tuple[str, float]]:
    """``{'a': {'b': 1}}`` as ``('prefix.a.b', 1)`` pairs, numbers only."""
    for key, value in values.items():
        name = f'{prefix}.{key}' if prefix else str(key)
        if isinstance(value, Mapping):
            yield from flatten(name, value)
        elif isinstance(value, (bool, int, float)) and value is not None:
            yield name, float(value)
