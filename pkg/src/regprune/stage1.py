"""Image-adaptive pruning at the vision-encoder output.

A visual token survives when its score reaches ``lambda1`` times the
register's score under the same attention map.
"""

from dataclasses import dataclass

import numpy as np

from .attn import REGISTER_ID, AttentionMap, ScoreVector, ValidationError, is_visual

MODES = ("cls", "mutual")

# Pruning-intensity presets keyed by visual-prefix length: (low, high) of the
# recommended lambda1 range; the low end is used as the default.
LAMBDA1_PRESETS = {576: (0.01, 0.02), 2880: (0.045, 0.045)}


@dataclass(frozen=True)
class Stage1Config:
    lambda1: float = 0.01
    mode: str = "cls"

    def __post_init__(self):
        if not np.isfinite(self.lambda1) or self.lambda1 < 0:
            raise ValidationError(f"lambda1 must be a finite non-negative number, got {self.lambda1!r}")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")


def stage1_preset(n_visual, mode="cls"):
    try:
        low, _ = LAMBDA1_PRESETS[n_visual]
    except KeyError:
        raise ValidationError(
            f"no lambda1 preset for {n_visual} visual tokens; known: {sorted(LAMBDA1_PRESETS)}"
        ) from None
    return Stage1Config(low, mode)


@dataclass(frozen=True, eq=False)
class PruneResult:
    retained_ids: tuple
    threshold: float
    register_score: float
    scores: ScoreVector
    stage: str
    register_id: int = REGISTER_ID

    @property
    def retained_visual(self):
        return tuple(i for i in self.retained_ids if i != self.register_id)

    @property
    def n_visual(self):
        return len(self.retained_ids) - 1


def threshold_prune(scores, register_score, lam, stage, register_id=REGISTER_ID):
    """Keep candidates with ``score >= lam * register_score``; always keep the register.

    Retained visual ids keep candidate order; the register id is appended last.
    """
    register_score = float(register_score)
    if not np.isfinite(register_score) or register_score < 0:
        raise ValidationError(f"register score must be finite and >= 0, got {register_score!r}")
    if register_id in scores.token_ids:
        raise ValidationError("register id must not appear among candidate scores")
    tau = lam * register_score
    keep = scores.scores >= tau
    retained = tuple(t for t, k in zip(scores.token_ids, keep) if k) + (register_id,)
    return PruneResult(retained, tau, register_score, scores, stage, register_id)


def _visual_columns(attn, register_id):
    if not attn.has_col(register_id):
        raise ValidationError(f"register column {register_id} missing from attention map")
    return [j for j, c in enumerate(attn.col_ids) if c != register_id and is_visual(c)]


def score_cls(attn: AttentionMap, register_id=REGISTER_ID):
    """Read CLS-to-token attention off a single-row (head-averaged) map."""
    if len(attn.row_ids) != 1:
        raise ValidationError(f"CLS scoring expects exactly one row, got {len(attn.row_ids)}")
    cols = _visual_columns(attn, register_id)
    row = attn.head_mean()[0]
    ids = tuple(attn.col_ids[j] for j in cols)
    return ScoreVector(ids, row[cols]), float(row[attn.col_index(register_id)])


def score_mutual(attn: AttentionMap, register_id=REGISTER_ID):
    """Mean attention each token receives from all visual tokens and the register."""
    if len(attn.row_ids) != len(attn.col_ids) or set(attn.row_ids) != set(attn.col_ids):
        raise ValidationError("mutual scoring needs a square map with identical row and column tokens")
    cols = _visual_columns(attn, register_id)
    received = attn.head_mean().mean(axis=0)
    ids = tuple(attn.col_ids[j] for j in cols)
    return ScoreVector(ids, received[cols]), float(received[attn.col_index(register_id)])


def prune_stage1(scores, register_score, cfg: Stage1Config, register_id=REGISTER_ID):
    return threshold_prune(scores, register_score, cfg.lambda1, "one", register_id)


def unify_video_tokens(frames):
    """Union of per-frame token ids, ordered by (frame, position within frame).

    Ids must already be globally unique (see :func:`video_token_id`).
    """
    out = []
    seen = set()
    for f, frame in enumerate(frames):
        ids = sorted(frame) if isinstance(frame, (set, frozenset)) else list(frame)
        for t in ids:
            if t in seen:
                raise ValidationError(f"token id {t!r} in frame {f} duplicates an earlier frame's id")
            seen.add(t)
            out.append(t)
    return tuple(out)


def video_token_id(frame, index, tokens_per_frame):
    return int(frame) * int(tokens_per_frame) + int(index)
