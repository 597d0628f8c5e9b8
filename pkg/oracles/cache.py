"""
JSON cache of oracle results keyed by the fingerprint of their inputs.
"""
import json
import logging
import threading
from pathlib import Path
from typing import Callable, Optional

from hdlab.hashing import fingerprint, plain

logger = logging.getLogger(__name__)


class OracleCache:
    """
    One JSON file mapping input fingerprints to result dicts.

    The file is rewritten whole on every store, with keys sorted.
    """

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries = {}
        if self.path.exists():
            try:
                self._entries = json.loads(self.path.read_text())
            except json.JSONDecodeError:
                logger.warning('ignoring unreadable oracle cache %s', self.path)

    def __len__(self) -> int:
        return len(self._entries)

    @staticmethod
    def key(kind: str, inputs: dict) -> str:
        return fingerprint({'oracle': kind, 'inputs': inputs})

    def get(self, key: str) -> Optional[dict]:
        return self._entries.get(key)

    def put(self, key: str, value: dict) -> None:
        with self._lock:
            self._entries[key] = plain(value)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(json.dumps(self._entries, indent=2, sort_keys=True))

    def fetch(self, kind: str, inputs: dict, compute: Callable[[], dict]) -> dict:
        """Cached result for ``inputs``, computing and storing it on a miss."""
        key = self.key(kind, inputs)
        hit = self.get(key)
        if hit is not None:
            logger.info('oracle cache hit for %s (%s)', kind, key[:12])
            return hit
        value = compute()
        self.put(key, value)
        return self._entries[key]
