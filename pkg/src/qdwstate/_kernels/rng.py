"""Counter-based random streams shared by the numba and numpy kernels.

Draw ``n`` of trajectory ``i`` under master seed ``s`` is a pure function::

    base  = mix(s + GOLDEN)
    key_i = mix(base + (i + 1) * GOLDEN)
    u     = (mix(key_i + (n + 1) * STEP) >> 11) * 2**-53

where ``mix`` is the splitmix64 finaliser. Streams therefore depend only on
(seed, trajectory index, draw index): never on thread count or batch layout.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
STEP = np.uint64(0xD1B54A32D192ED03)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
INV53 = 1.0 / 9007199254740992.0

# salts separating independent uses of one master seed
SALT_DYNAMICS = 0
SALT_DETECTOR = 0x5EED0001
SALT_BACKGROUND = 0x5EED0002


def mix_array(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> S30)) * MIX1
    z = (z ^ (z >> S27)) * MIX2
    return z ^ (z >> S31)


def base_key(seed: int, salt: int = SALT_DYNAMICS) -> np.uint64:
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer (got {seed})")
    z = np.array([seed], dtype=np.uint64) ^ np.array([salt], dtype=np.uint64)
    return mix_array(z + GOLDEN)[0]


def stream_keys(base: np.uint64, index: np.ndarray) -> np.ndarray:
    idx = np.asarray(index, dtype=np.uint64) + np.uint64(1)
    return mix_array(np.uint64(base) + idx * GOLDEN)


def uniforms(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """One uniform in [0, 1) per (key, counter) pair."""
    c = np.asarray(counters, dtype=np.uint64) + np.uint64(1)
    z = mix_array(np.asarray(keys, dtype=np.uint64) + c * STEP)
    return (z >> S11).astype(np.float64) * INV53
