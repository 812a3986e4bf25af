"""Counter-based random streams.

Every Monte Carlo sample index owns an independent stream, so a batch can be
split across threads or re-run in a different order and still give the same
draws.  Stream ``i`` of seed ``s`` is the SplitMix64 sequence started from
``mix64(key(s) + (i + 1) * GOLDEN)``; draw ``j`` of that stream is
``mix64(stream_key + (j + 1) * GOLDEN)``.

The scalar helpers are numba-compilable; the ``*_np`` versions work on uint64
arrays and produce bit-identical values.
"""

import math

import numpy as np

from ._accel import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53

# Salts keep the Monte Carlo and event-driven engines on unrelated streams.
MC_SALT = 0x5EC0_0D5A_17A1_0001
DES_SALT = 0xDE5E_7E17_5EED_0002


@njit
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit
def stream_key(key, index):
    return mix64(key + (np.uint64(index) + _ONE) * GOLDEN)


@njit
def uniform(key, counter):
    """Uniform double in the open interval (0, 1)."""
    z = mix64(key + (np.uint64(counter) + _ONE) * GOLDEN)
    return (np.float64(z >> _S11) + 0.5) * _INV53


@njit
def geometric(p, log_q, u):
    """Attempts until first success, by inversion of the geometric CDF."""
    if p >= 1.0:
        return 1
    return 1 + np.int64(math.floor(math.log(u) / log_q))


def seed_key(seed: int, salt: int) -> np.uint64:
    """Scramble a user seed (any non-negative int) into a 64-bit stream key."""
    s = np.uint64(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)
    with np.errstate(over="ignore"):
        return mix64_np(np.asarray([s ^ np.uint64(salt)], dtype=np.uint64))[0]


def derive_seed(seed: int, *labels: int) -> int:
    """Child seed for a sub-task, e.g. one grid cell of a sweep."""
    mask = 0xFFFF_FFFF_FFFF_FFFF
    key = int(seed) & mask
    for label in labels:
        z = (key ^ (int(label) * 0x9E3779B97F4A7C15)) & mask
        key = int(mix64_np(np.asarray([z], dtype=np.uint64))[0])
    return key


def mix64_np(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def stream_keys_np(key: np.uint64, indices: np.ndarray) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64_np(np.uint64(key) + (idx + _ONE) * GOLDEN)


def uniform_np(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    ctr = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = mix64_np(keys + (ctr + _ONE) * GOLDEN)
    return ((z >> _S11).astype(np.float64) + 0.5) * _INV53


def geometric_np(p: float, u: np.ndarray) -> np.ndarray:
    if p >= 1.0:
        return np.ones(np.shape(u), dtype=np.int64)
    return 1 + np.floor(np.log(u) / math.log1p(-p)).astype(np.int64)
