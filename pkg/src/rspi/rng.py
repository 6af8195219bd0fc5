"""Counter-based Gaussian streams.

Every normal variate is a pure function of ``(seed, stream_index, counter)``:
a SplitMix64-style finalizer hashes the triple and Box-Muller maps the 64
output bits to one standard normal.  Nothing is stateful, so a batch of
samples can be split over any number of workers, or evaluated one sample at
a time, and still see the same noise.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

__all__ = ["RngStream", "stream_keys", "standard_normals", "derive_seed"]

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_STREAM_SALT = 0x5851F42D4C957F2D
_COUNTER_SALT = 0x14057B7EF767814F
_TWO_PI = 2.0 * np.pi
_U32 = 2.0**-32


def _mix_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps modulo 2**64
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def stream_keys(seed: int, indices) -> np.ndarray:
    """Per-stream 64-bit keys for ``indices`` under ``seed``."""
    base = _mix_int((int(seed) & _MASK) ^ _STREAM_SALT)
    idx = np.asarray(indices, dtype=np.uint64)
    return _mix_array(idx * np.uint64(_GOLDEN) + np.uint64(base))


def _counter_key(seed: int, counter: int) -> np.uint64:
    base = _mix_int((int(seed) & _MASK) ^ _COUNTER_SALT)
    return np.uint64(_mix_int(base + (counter + 1) * _GOLDEN))


def standard_normals(seed: int, keys: np.ndarray, counter: int) -> np.ndarray:
    """One standard normal per stream key at position ``counter``."""
    h = _mix_array(keys ^ _counter_key(seed, counter))
    u1 = ((h >> np.uint64(32)).astype(np.float64) + 0.5) * _U32
    u2 = ((h & np.uint64(0xFFFFFFFF)).astype(np.float64) + 0.5) * _U32
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


@dataclass(frozen=True)
class RngStream:
    """Identifies the noise of one sample path."""

    seed: int
    stream_index: int = 0

    def normals(self, counter: int) -> float:
        keys = stream_keys(self.seed, [self.stream_index])
        return float(standard_normals(self.seed, keys, counter)[0])


def derive_seed(master: int, *labels) -> int:
    """Stable 64-bit seed for a labelled sub-experiment of ``master``."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(master).to_bytes(16, "little", signed=True))
    for lab in labels:
        h.update(b"\x1f")
        h.update(str(lab).encode())
    return int.from_bytes(h.digest(), "little")
