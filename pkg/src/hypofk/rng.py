"""Counter-based random numbers: value = hash(seed, path_index, draw_index).

Every variate consumed by a simulated path is a pure function of the seed,
the global path index and a per-path draw counter, so results are bit-equal
under any batching or thread schedule.  The mixer is the splitmix64
finalizer applied twice; normals come from the Wichura PPND16 inverse CDF.

The numba path kernels inline the same construction (see ``engine``); the
numpy versions here are the reference used by tests and light-weight
sampling tasks.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

__all__ = ["uniforms", "normals", "mix_seed"]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SEED_TAG = np.uint64(0x6A09E667F3BCC909)
_PATH_MUL = np.uint64(0xA24BAED4963EE407)
_DRAW_MUL = np.uint64(0x9FB21C651E98DF25)


def _mix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def mix_seed(seed: int) -> np.uint64:
    return _mix(np.uint64(np.uint64(seed) ^ _SEED_TAG))


def uniforms(seed: int, path_index, draw_index) -> np.ndarray:
    """Uniform(0,1) variate(s) for (seed, path_index, draw_index); vectorized."""
    with np.errstate(over="ignore"):
        sm = mix_seed(seed)
        p = np.asarray(path_index, dtype=np.uint64)
        d = np.asarray(draw_index, dtype=np.uint64)
        h = _mix(sm ^ (p * _PATH_MUL))
        h = _mix(h + d * _DRAW_MUL)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def normals(seed: int, path_index, draw_index) -> np.ndarray:
    return ndtri(uniforms(seed, path_index, draw_index))
