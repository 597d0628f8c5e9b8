"""
Parameter checkpoints: named policy arrays plus the fingerprint of the
configuration that produced them.
"""
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from hdlab.containers import read_arrays, write_arrays

MAGIC = 'hdlab-checkpoint/1'


def save_checkpoint(
    path: Path,
    arrays: Mapping[str, np.ndarray],
    fingerprint: str,
    meta: Optional[dict] = None,
) -> Path:
    return write_arrays(path, arrays, {'format': MAGIC, 'fingerprint': fingerprint, 'meta': meta or {}})


def load_checkpoint(path: Path) -> Tuple[Dict[str, np.ndarray], dict]:
    """Returns (name -> array, header dict)."""
    return read_arrays(path, MAGIC)
