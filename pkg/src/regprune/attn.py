"""Attention primitives: probability rows, softmax, entropy, n_eff, cosine.

Token identities are plain ints.  Visual tokens use ids ``>= 0``; the
register is ``REGISTER_ID`` (-1); the CLS token and text tokens use ids
``<= -2`` (see :func:`text_id`).
"""

from dataclasses import dataclass

import numpy as np

from . import kernels

PROB_TOL = 1e-6
INTERNAL_TOL = 1e-9

REGISTER_ID = -1
CLS_ID = -2


def text_id(j):
    """Token id of the j-th text token (0-based)."""
    return -3 - int(j)


def is_visual(token_id):
    return token_id >= 0


class ValidationError(ValueError):
    """Input violates a documented invariant."""


def _check_unique(ids, what):
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{what} contains duplicate token ids")


def as_prob_vector(p, tol=PROB_TOL):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValidationError("probability vector must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(p)):
        raise ValidationError("probability vector has non-finite entries")
    if np.any(p < 0):
        raise ValidationError("probability vector has negative entries")
    total = p.sum()
    if abs(total - 1.0) > tol:
        raise ValidationError(f"probability vector sums to {total!r}, not 1")
    return p


@dataclass(frozen=True)
class ProbVector:
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", as_prob_vector(self.weights))

    def __len__(self):
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class AttentionMap:
    """Attention from evaluator rows to candidate columns.

    ``weights`` is ``(rows, cols)`` or ``(heads, rows, cols)``; every row of
    every head is a probability vector.
    """

    row_ids: tuple
    col_ids: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim not in (2, 3):
            raise ValidationError(f"attention weights must be 2-d or 3-d, got {w.ndim}-d")
        row_ids = tuple(int(i) for i in self.row_ids)
        col_ids = tuple(int(i) for i in self.col_ids)
        if w.shape[-2:] != (len(row_ids), len(col_ids)):
            raise ValidationError(
                f"weights shape {w.shape} does not match {len(row_ids)} rows x {len(col_ids)} cols"
            )
        _check_unique(row_ids, "row ids")
        _check_unique(col_ids, "col ids")
        flat = w.reshape(-1, w.shape[-1])
        if not np.all(np.isfinite(flat)):
            bad = int(np.argwhere(~np.isfinite(flat).all(axis=1))[0, 0]) % len(row_ids)
            raise ValidationError(f"attention row {bad} (id {row_ids[bad]}) has non-finite weights")
        if np.any(flat < 0):
            raise ValidationError("attention weights must be non-negative")
        sums = flat.sum(axis=1)
        off = np.abs(sums - 1.0) > PROB_TOL
        if np.any(off):
            bad = int(np.argmax(off)) % len(row_ids)
            raise ValidationError(f"attention row {bad} (id {row_ids[bad]}) sums to {sums[np.argmax(off)]!r}")
        w.setflags(write=False)
        object.__setattr__(self, "row_ids", row_ids)
        object.__setattr__(self, "col_ids", col_ids)
        object.__setattr__(self, "weights", w)

    @property
    def n_heads(self):
        return 1 if self.weights.ndim == 2 else self.weights.shape[0]

    def head_mean(self):
        """The (rows, cols) map averaged over heads."""
        if self.weights.ndim == 2:
            return self.weights
        return self.weights.mean(axis=0)

    def col_index(self, token_id):
        try:
            return self.col_ids.index(token_id)
        except ValueError:
            raise ValidationError(f"token id {token_id} is not a column of this map") from None

    def has_col(self, token_id):
        return token_id in self.col_ids

    def restrict_cols(self, keep_ids):
        """Keep only ``keep_ids`` columns (in map order) and renormalise each row.

        For a single softmax layer this equals recomputing attention over the
        reduced key set, because dropped keys only change the normaliser.
        """
        keep = set(int(i) for i in keep_ids)
        missing = keep.difference(self.col_ids)
        if missing:
            raise ValidationError(f"requested columns not in map: {sorted(missing)[:8]}")
        idx = [j for j, c in enumerate(self.col_ids) if c in keep]
        w = self.weights[..., idx]
        w = w / w.sum(axis=-1, keepdims=True)
        return AttentionMap(self.row_ids, tuple(self.col_ids[j] for j in idx), w)

    def restrict_rows(self, keep_ids):
        keep = set(int(i) for i in keep_ids)
        idx = [i for i, r in enumerate(self.row_ids) if r in keep]
        return AttentionMap(tuple(self.row_ids[i] for i in idx), self.col_ids, self.weights[..., idx, :])


@dataclass(frozen=True, eq=False)
class ScoreVector:
    token_ids: tuple
    scores: np.ndarray

    def __post_init__(self):
        ids = tuple(int(i) for i in self.token_ids)
        s = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if len(ids) != s.shape[0]:
            raise ValidationError("token_ids and scores differ in length")
        _check_unique(ids, "score token ids")
        if np.any(~np.isfinite(s)) or np.any(s < 0):
            raise ValidationError("scores must be finite and non-negative")
        s.setflags(write=False)
        object.__setattr__(self, "token_ids", ids)
        object.__setattr__(self, "scores", s)

    def __len__(self):
        return len(self.token_ids)

    def as_dict(self):
        return dict(zip(self.token_ids, self.scores.tolist()))


def softmax_rows(logits, scale=1.0, row_ids=None, col_ids=None):
    """Row-wise softmax of ``scale * logits`` (max-subtracted)."""
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError("logits must be a 2-d matrix")
    if not scale > 0:
        raise ValidationError(f"scale must be positive, got {scale!r}")
    finite = np.isfinite(x).all(axis=1)
    if not finite.all():
        raise ValidationError(f"logits row {int(np.argmin(finite))} has non-finite entries")
    rows = tuple(range(x.shape[0])) if row_ids is None else row_ids
    cols = tuple(range(x.shape[1])) if col_ids is None else col_ids
    return AttentionMap(rows, cols, kernels.softmax_rows(x, scale))


def entropy_nats(p):
    """Shannon entropy in nats, with 0 log 0 = 0."""
    if isinstance(p, ProbVector):
        w = p.weights
    else:
        w = as_prob_vector(p)
    return float(max(kernels.entropy_rows(w[None, :])[0], 0.0))


def n_eff(p):
    """Effective number of attended tokens, ``exp(H(p))``."""
    return float(np.exp(entropy_nats(p)))


def renormalize_without(p, drop_index):
    """Remove one entry from a probability vector and rescale the rest to sum to 1."""
    w = np.delete(np.asarray(p, dtype=np.float64), drop_index)
    total = w.sum()
    if total <= 0:
        raise ValidationError("no mass left after removing the entry")
    return w / total


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValidationError(f"vector lengths differ: {a.shape[0]} vs {b.shape[0]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("vectors must be finite")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValidationError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))
