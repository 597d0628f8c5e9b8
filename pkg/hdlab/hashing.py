"""
Canonical JSON and the fingerprints derived from it.
"""
import hashlib
import json
import math

import numpy as np


def plain(value):
    """Recursively turn numpy values, tuples and infinities into JSON-safe data."""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    return value


def canonical_json(payload) -> str:
    """Sorted keys and compact separators."""
    return json.dumps(plain(payload), sort_keys=True, separators=(',', ':'), allow_nan=False)


def fingerprint(payload) -> str:
    return hashlib.sha256(canonical_json(payload).encode('utf-8')).hexdigest()
