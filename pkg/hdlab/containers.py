"""
Binary array container shared by checkpoints and trace stores.

Layout: an 8-byte little-endian header length, a UTF-8 JSON header, then
every array as little-endian float64 in header order.
"""
import json
import struct
from pathlib import Path
from typing import Dict, Mapping, Tuple

import numpy as np


def write_arrays(path: Path, arrays: Mapping[str, np.ndarray], header: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = dict(header, arrays=[{'name': name, 'shape': list(np.shape(a))} for name, a in arrays.items()])
    encoded = json.dumps(header, sort_keys=True).encode('utf-8')
    with open(path, 'wb') as handle:
        handle.write(struct.pack('<Q', len(encoded)))
        handle.write(encoded)
        for name in arrays:
            handle.write(np.ascontiguousarray(arrays[name], dtype='<f8').tobytes())
    return path


def read_arrays(path: Path, expected_format: str) -> Tuple[Dict[str, np.ndarray], dict]:
    """
    Read a container written by ``write_arrays``.

    Returns:
        tuple: (name -> array, header dict)
    """
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f'{path} is too short to be a container')
    (length,) = struct.unpack('<Q', raw[:8])
    try:
        header = json.loads(raw[8:8 + length].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f'{path} has an unreadable header') from exc
    if header.get('format') != expected_format:
        raise ValueError(f'{path} is not a {expected_format} file')
    offset = 8 + length
    arrays = {}
    for entry in header['arrays']:
        count = int(np.prod(entry['shape'])) if entry['shape'] else 1
        chunk = raw[offset:offset + 8 * count]
        if len(chunk) != 8 * count:
            raise ValueError(f'{path} is truncated at array {entry["name"]!r}')
        arrays[entry['name']] = np.frombuffer(chunk, dtype='<f8').reshape(entry['shape']).astype(np.float64)
        offset += 8 * count
    return arrays, header
