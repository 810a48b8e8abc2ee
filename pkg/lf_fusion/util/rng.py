# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Counter-based hashing used in place of stateful random generators."""
import zlib

import numpy as np
from numpy.typing import ArrayLike

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)
_SHIFT_30 = np.uint64(30)
_SHIFT_27 = np.uint64(27)
_SHIFT_31 = np.uint64(31)
_SHIFT_11 = np.uint64(11)
_UNIT = 2.0 ** -53


def _as_u64(values: ArrayLike) -> np.ndarray:
    """Reinterpret integers (possibly negative) as uint64 bit patterns."""
    array = np.asarray(values)
    if array.dtype == np.uint64:
        return np.atleast_1d(array)
    return np.ascontiguousarray(
        np.atleast_1d(array), dtype=np.int64
    ).view(np.uint64)


def splitmix64(values: ArrayLike) -> np.ndarray:
    """The splitmix64 finalizer applied elementwise."""
    z = _as_u64(values) + _GOLDEN
    z = (z ^ (z >> _SHIFT_30)) * _MIX_1
    z = (z ^ (z >> _SHIFT_27)) * _MIX_2
    return z ^ (z >> _SHIFT_31)


def hash_u64(seed: int, *keys: ArrayLike) -> np.ndarray:
    """Hash integer key arrays (broadcast together) under ``seed``."""
    h = splitmix64(np.array([seed], dtype=np.int64))
    for key in keys:
        h = splitmix64(h ^ _as_u64(key))
    return h


def hash_uniform(seed: int, *keys: ArrayLike) -> np.ndarray:
    """Uniform floats in [0, 1) derived from integer keys."""
    return (hash_u64(seed, *keys) >> _SHIFT_11).astype(np.float64) * _UNIT


def derive_seed(seed: int, name: str) -> int:
    """A stable sub-seed for a named stream."""
    mixed = hash_u64(seed, np.array([zlib.crc32(name.encode("utf-8"))]))
    return int(mixed[0] >> np.uint64(1))
