"""Counter-based Gaussian streams.

Every sample owns a fixed slice of a Philox stream keyed by
``(seed, tag, level)``: the increments of sample ``i`` depend on nothing
else, so results are identical however the sample range is chunked or
spread over threads.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_WORDS_PER_COUNTER = 4
_TWO_M53 = 2.0 ** -53


def stream_key(seed: int, *path: int) -> np.ndarray:
    """128-bit Philox key derived from a seed and an integer path."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(p) for p in path]])
    return ss.generate_state(2, dtype=np.uint64)


def uniforms(key: np.ndarray, start: int, n: int, width: int) -> np.ndarray:
    """Open-interval uniforms, shape ``(n, width)``, for samples ``start .. start+n-1``."""
    blocks = -(-width // _WORDS_PER_COUNTER)
    counter = np.zeros(4, dtype=np.uint64)
    counter[0] = np.uint64(start * blocks)
    bitgen = np.random.Philox(key=key, counter=counter)
    raw = bitgen.random_raw(n * blocks * _WORDS_PER_COUNTER)
    raw = raw.reshape(n, blocks * _WORDS_PER_COUNTER)[:, :width]
    # 53 high bits, centred in their cell so 0 and 1 never occur
    np.right_shift(raw, np.uint64(11), out=raw)
    u = raw.astype(np.float64)
    u += 0.5
    u *= _TWO_M53
    return u


def normals(key: np.ndarray, start: int, n: int, width: int) -> np.ndarray:
    """Standard normals by inverse CDF, shape ``(n, width)``."""
    u = uniforms(key, start, n, width)
    return ndtri(u, out=u)
