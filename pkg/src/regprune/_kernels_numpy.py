"""Pure-numpy implementations of the hot kernels.

``splitmix64_block``, ``peak_to_mean_abs`` and the two counting kernels have
twins in ``_kernels_numba`` with the same signatures and results (bit-identical
for the integer kernels, within float round-off for the reduction).
"""

import numpy as np

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64_block(state, n):
    """Return ``(outputs, new_state)`` for ``n`` draws of splitmix64.

    The i-th output (1-based) is ``mix(state + i * gamma)`` so the stream is
    vectorisable; uint64 arithmetic wraps modulo 2**64.
    """
    state = np.uint64(state)
    steps = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = state + steps * GOLDEN_GAMMA
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
        new_state = state + np.uint64(n) * GOLDEN_GAMMA
    return z, new_state


def softmax_rows(logits, scale):
    x = logits * scale
    x = x - x.max(axis=1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=1, keepdims=True)


def entropy_rows(p):
    out = np.zeros(p.shape[0])
    pos = p > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pos, p * np.log(np.where(pos, p, 1.0)), 0.0)
    out[:] = -terms.sum(axis=1)
    return out


def peak_to_mean_abs(values, eps):
    a = np.abs(values)
    return a.max(axis=0) / (a.mean(axis=0) + eps)


def count_retained(flat_scores, offsets, refs, lam):
    """Per-sample count of ``score >= lam * ref`` over a ragged score table."""
    n = refs.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    if flat_scores.shape[0] == 0:
        return counts
    sizes = np.diff(offsets)
    thresholds = np.repeat(lam * refs, sizes)
    hits = (flat_scores >= thresholds).astype(np.int64)
    cum = np.concatenate(([0], np.cumsum(hits)))
    counts[:] = cum[offsets[1:]] - cum[offsets[:-1]]
    return counts


def count_retained_grid(flat_scores, offsets, refs, lams):
    """Average retained count for every lambda in ``lams`` (brute force)."""
    out = np.empty(lams.shape[0])
    n = refs.shape[0]
    for j in range(lams.shape[0]):
        out[j] = count_retained(flat_scores, offsets, refs, lams[j]).sum() / n
    return out
