"""numba ``@njit`` versions of the hot kernels (see ``_kernels_numpy``)."""

import numpy as np
from numba import njit, prange

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True)
def _splitmix64_block(state, n):
    out = np.empty(n, dtype=np.uint64)
    s = state
    for i in range(n):
        s = s + GOLDEN_GAMMA
        z = s
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        out[i] = z ^ (z >> np.uint64(31))
    return out, s


def splitmix64_block(state, n):
    out, s = _splitmix64_block(np.uint64(state), n)
    return out, np.uint64(s)


@njit(cache=True)
def peak_to_mean_abs(values, eps):
    n, c = values.shape
    peak = np.zeros(c)
    total = np.zeros(c)
    # row-major walk; the arrays are C-contiguous
    for i in range(n):
        for k in range(c):
            a = abs(values[i, k])
            total[k] += a
            if a > peak[k]:
                peak[k] = a
    return peak / (total / n + eps)


@njit(cache=True)
def count_retained(flat_scores, offsets, refs, lam):
    n = refs.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    for s in range(n):
        tau = lam * refs[s]
        c = 0
        for i in range(offsets[s], offsets[s + 1]):
            if flat_scores[i] >= tau:
                c += 1
        counts[s] = c
    return counts


@njit(cache=True, parallel=True)
def count_retained_grid(flat_scores, offsets, refs, lams):
    out = np.empty(lams.shape[0])
    n = refs.shape[0]
    for j in prange(lams.shape[0]):
        total = 0
        for s in range(n):
            tau = lams[j] * refs[s]
            for i in range(offsets[s], offsets[s + 1]):
                if flat_scores[i] >= tau:
                    total += 1
        out[j] = total / n
    return out
