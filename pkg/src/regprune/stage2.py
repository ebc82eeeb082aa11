"""Query-adaptive pruning inside the decoder, and the two-stage pipeline."""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .attn import REGISTER_ID, AttentionMap, ScoreVector, ValidationError, is_visual, n_eff, renormalize_without
from .stage1 import PruneResult, Stage1Config, prune_stage1, score_cls, score_mutual, threshold_prune

DEFAULT_LAYER = 11
ALT_LAYER = 10
TEXT_ROWS = ("all", "query")


@dataclass(frozen=True)
class Stage2Config:
    lambda2: float = 1.0
    layer: int = DEFAULT_LAYER
    text_rows: str = "all"

    def __post_init__(self):
        if not np.isfinite(self.lambda2) or self.lambda2 < 0:
            raise ValidationError(f"lambda2 must be a finite non-negative number, got {self.lambda2!r}")
        if int(self.layer) != self.layer or self.layer < 0:
            raise ValidationError(f"layer must be a non-negative integer, got {self.layer!r}")
        if self.text_rows not in TEXT_ROWS:
            raise ValidationError(f"text_rows must be one of {TEXT_ROWS}, got {self.text_rows!r}")


def score_text_to_vision(attn: AttentionMap, register_id=REGISTER_ID):
    """Max text attention per visual token; mean text attention to the register.

    Columns that are neither visual nor the register (e.g. text) are ignored.
    """
    if len(attn.row_ids) == 0:
        raise ValidationError("text scoring needs at least one text row")
    if not attn.has_col(register_id):
        raise ValidationError(f"register column {register_id} missing from text attention")
    w = attn.head_mean()
    cols = [j for j, c in enumerate(attn.col_ids) if c != register_id and is_visual(c)]
    ids = tuple(attn.col_ids[j] for j in cols)
    visual = w[:, cols].max(axis=0) if cols else np.zeros(0)
    return ScoreVector(ids, visual), float(w[:, attn.col_index(register_id)].mean())


def prune_stage2(scores, register_score, cfg: Stage2Config, register_id=REGISTER_ID):
    return threshold_prune(scores, register_score, cfg.lambda2, "two", register_id)


@dataclass(frozen=True)
class PipelineReport:
    sample_id: str
    n_original: int
    n_after_stage1: int
    n_final: int
    tau1: float
    tau2: float
    register_score1: float
    register_score2: float
    retained_final: tuple
    n_eff_before: float
    n_eff_after: float
    mode: str
    lambda1: float
    lambda2: float
    layer: int

    def to_dict(self):
        d = asdict(self)
        d["retained_final"] = list(self.retained_final)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def absorption_neff(views, mode, register_id=REGISTER_ID):
    """(n_eff before, n_eff after) of the evaluator row over visual tokens.

    The evaluator is the CLS row in ``cls`` mode and the mean of all rows in
    ``mutual`` mode; after construction the register's mass is removed and
    the rest renormalised.
    """
    pre = views.pre.head_mean()
    post = views.post.head_mean()
    pre_row = pre[0] if mode == "cls" else pre.mean(axis=0)
    post_row = post[0] if mode == "cls" else post.mean(axis=0)
    pre_vis = [j for j, c in enumerate(views.pre.col_ids) if is_visual(c)]
    before = pre_row[pre_vis] / pre_row[pre_vis].sum()
    keep = [j for j, c in enumerate(views.post.col_ids) if is_visual(c) or c == register_id]
    sub_ids = [views.post.col_ids[j] for j in keep]
    after = renormalize_without(post_row[keep], sub_ids.index(register_id))
    return n_eff(before), n_eff(after)


def stage1_for(sample, cfg1: Stage1Config, neurons):
    """Score and prune one bundle at the encoder; returns (PruneResult, EncoderViews)."""
    if cfg1.mode == "cls":
        views = sample.cls_views(neurons)
        scores, reg = score_cls(views.post)
    else:
        views = sample.mutual_views(neurons)
        scores, reg = score_mutual(views.post)
    return prune_stage1(scores, reg, cfg1), views


def stage2_for(sample, s1: PruneResult, cfg2: Stage2Config):
    text = sample.text_attention(cfg2.layer, s1.retained_visual, rows=cfg2.text_rows)
    scores, reg = score_text_to_vision(text)
    return prune_stage2(scores, reg, cfg2)


def run_pipeline(sample, cfg1: Stage1Config, cfg2: Stage2Config, neurons) -> PipelineReport:
    """Register construction, stage-1 pruning, then stage-2 pruning on the survivors."""
    if int(cfg2.layer) not in sample.text_attn:
        # fail before any encoder work
        sample.text_attention(cfg2.layer, ())
    s1, views = stage1_for(sample, cfg1, neurons)
    s2 = stage2_for(sample, s1, cfg2)
    before, after = absorption_neff(views, cfg1.mode)
    return PipelineReport(
        sample_id=sample.sample_id,
        n_original=sample.n_visual,
        n_after_stage1=s1.n_visual,
        n_final=s2.n_visual,
        tau1=s1.threshold,
        tau2=s2.threshold,
        register_score1=s1.register_score,
        register_score2=s2.register_score,
        retained_final=s2.retained_ids,
        n_eff_before=before,
        n_eff_after=after,
        mode=cfg1.mode,
        lambda1=cfg1.lambda1,
        lambda2=cfg2.lambda2,
        layer=int(cfg2.layer),
    )
