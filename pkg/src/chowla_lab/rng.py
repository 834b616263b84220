"""Counter-based deterministic randomness.

Every random draw is a pure function of (seed, stream tag, index), so sources
can be evaluated at arbitrary indices in arbitrary order and always reproduce
the same values.  The mixer is the splitmix64 finalizer, applied twice.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Stream tags keep draws for different purposes statistically disjoint even
# under the same seed.
STREAM_VALUE = 0x11
STREAM_ZERO = 0x22
STREAM_SYMBOL = 0x33
STREAM_POINT = 0x44
STREAM_BETA = 0x55
STREAM_MODULE = 0x66


def _mix_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def stream_key(seed: int, stream: int) -> int:
    """64-bit key for a (seed, stream) pair."""
    return _mix_int(_mix_int(seed * _GOLDEN + stream) + _GOLDEN)


def hash_u64(seed: int, stream: int, n: int) -> int:
    """Scalar counter hash: uniform 64-bit word for index n."""
    return _mix_int(stream_key(seed, stream) + ((n + 1) * _GOLDEN & _MASK))


def hash_u64_block(seed: int, stream: int, start: int, stop: int) -> np.ndarray:
    """Vectorized counter hash for indices [start, stop)."""
    key = np.uint64(stream_key(seed, stream))
    idx = np.arange(start + 1, stop + 1, dtype=np.uint64)
    z = key + idx * np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def uniform01(seed: int, stream: int, n: int) -> float:
    """Uniform 53-bit dyadic in [0, 1) at index n."""
    return (hash_u64(seed, stream, n) >> 11) * 2.0 ** -53


def uniform01_block(seed: int, stream: int, start: int, stop: int) -> np.ndarray:
    h = hash_u64_block(seed, stream, start, stop)
    return (h >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def randbelow(seed: int, stream: int, n: int, m: int) -> int:
    """Uniform integer in [0, m); modulo bias is m / 2**64, negligible."""
    return hash_u64(seed, stream, n) % m


def randbelow_block(seed: int, stream: int, start: int, stop: int, m: int) -> np.ndarray:
    h = hash_u64_block(seed, stream, start, stop)
    return (h % np.uint64(m)).astype(np.int64)


def derive_seed(seed: int, tag: str) -> int:
    """Stable named sub-seed, so adding one consumer never shifts another."""
    acc = stream_key(seed, STREAM_MODULE)
    for ch in tag:
        acc = _mix_int(acc + ord(ch) * _GOLDEN)
    return acc
