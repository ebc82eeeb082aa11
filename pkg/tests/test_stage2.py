import json

import numpy as np
import pytest

from _fixtures import (
    TWO_QUERY_FINAL,
    TWO_QUERY_LAMBDA1,
    TWO_QUERY_LAMBDA2,
    TWO_QUERY_NEURONS,
    TWO_QUERY_S1,
    two_query_config,
)
from regprune.attn import REGISTER_ID, AttentionMap, ScoreVector, ValidationError, text_id
from regprune.bundle import BundleError
from regprune.stage1 import Stage1Config, score_cls
from regprune.stage2 import (
    PipelineReport,
    Stage2Config,
    prune_stage2,
    run_pipeline,
    score_text_to_vision,
)
from regprune.synth import generate_sample


def test_prune_stage2_example():
    s = ScoreVector((0, 1, 2), [0.6, 0.5, 0.05])
    res = prune_stage2(s, 0.30, Stage2Config(1.0))
    assert res.retained_ids == (0, 1, REGISTER_ID)
    assert res.stage == "two"


def test_score_text_to_vision_max_and_mean():
    rows = (text_id(0), text_id(1))
    cols = (4, 9, REGISTER_ID, text_id(0))
    w = [[0.1, 0.5, 0.2, 0.2], [0.6, 0.1, 0.3, 0.0]]
    scores, reg = score_text_to_vision(AttentionMap(rows, cols, w))
    assert scores.token_ids == (4, 9)
    np.testing.assert_allclose(scores.scores, [0.6, 0.5])
    assert reg == pytest.approx(0.25)


def test_score_text_needs_register():
    m = AttentionMap((text_id(0),), (0, 1), [[0.5, 0.5]])
    with pytest.raises(ValidationError, match="register"):
        score_text_to_vision(m)


def test_stage2_config_rejects():
    with pytest.raises(ValidationError):
        Stage2Config(-1.0)
    with pytest.raises(ValidationError):
        Stage2Config(1.0, text_rows="some")


def _naive_final(bundle, lam1, lam2, layer=11):
    post = bundle.cls_views(TWO_QUERY_NEURONS).post
    row = post.head_mean()[0]
    col = {c: float(row[j]) for j, c in enumerate(post.col_ids)}
    s1 = [c for c in bundle.visual_ids if col[c] >= lam1 * col[REGISTER_ID]]
    text = bundle.text_attention(layer, s1)
    w = text.head_mean()
    tcol = {c: w[:, j] for j, c in enumerate(text.col_ids)}
    reg = sum(tcol[REGISTER_ID]) / len(tcol[REGISTER_ID])
    return s1, tuple(c for c in s1 if max(tcol[c]) >= lam2 * reg)


@pytest.mark.parametrize("query_id", [0, 1])
def test_two_query_golden_sets(query_id):
    b = generate_sample(two_query_config(query_id))
    rep = run_pipeline(b, Stage1Config(TWO_QUERY_LAMBDA1), Stage2Config(TWO_QUERY_LAMBDA2), TWO_QUERY_NEURONS)
    s1, final = _naive_final(b, TWO_QUERY_LAMBDA1, TWO_QUERY_LAMBDA2)
    assert tuple(s1) == TWO_QUERY_S1
    assert rep.retained_final == final + (REGISTER_ID,)
    assert rep.retained_final[:-1] == TWO_QUERY_FINAL[query_id]
    assert rep.n_after_stage1 == len(TWO_QUERY_S1)
    assert rep.n_final == len(TWO_QUERY_FINAL[query_id])
    assert rep.n_original == 36


def test_pipeline_zero_lambdas_keep_everything():
    b = generate_sample(two_query_config(0))
    rep = run_pipeline(b, Stage1Config(0.0), Stage2Config(0.0), TWO_QUERY_NEURONS)
    assert rep.n_final == rep.n_original == 36


def test_pipeline_missing_layer_lists_available():
    b = generate_sample(two_query_config(0))
    with pytest.raises(BundleError, match="11"):
        run_pipeline(b, Stage1Config(), Stage2Config(layer=3), TWO_QUERY_NEURONS)


def test_query_rows_only():
    b = generate_sample(two_query_config(1))
    rep = run_pipeline(b, Stage1Config(TWO_QUERY_LAMBDA1), Stage2Config(1.0, text_rows="query"), TWO_QUERY_NEURONS)
    assert REGISTER_ID in rep.retained_final


def test_report_json_is_canonical():
    b = generate_sample(two_query_config(0))
    rep = run_pipeline(b, Stage1Config(TWO_QUERY_LAMBDA1), Stage2Config(), TWO_QUERY_NEURONS)
    text = rep.to_json()
    assert list(json.loads(text)) == sorted(PipelineReport.__dataclass_fields__)
    assert text == run_pipeline(b, Stage1Config(TWO_QUERY_LAMBDA1), Stage2Config(), TWO_QUERY_NEURONS).to_json()
    assert rep.n_eff_after > rep.n_eff_before


def test_mutual_mode_runs():
    b = generate_sample(two_query_config(0))
    rep = run_pipeline(b, Stage1Config(0.5, "mutual"), Stage2Config(0.0), TWO_QUERY_NEURONS)
    assert rep.mode == "mutual"
    assert rep.n_final == rep.n_after_stage1
