import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from regprune.attn import (
    AttentionMap,
    ProbVector,
    ScoreVector,
    ValidationError,
    cosine_similarity,
    entropy_nats,
    n_eff,
    softmax_rows,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize("c", [-7.5, 0.0, 3.0, 1e3])
def test_softmax_constant_row_is_uniform(c):
    out = softmax_rows([[c] * 4]).weights
    np.testing.assert_allclose(out, [[0.25] * 4], atol=1e-15)


def test_softmax_ln3():
    out = softmax_rows([[0.0, math.log(3)]], scale=1.0).weights
    np.testing.assert_allclose(out, [[0.25, 0.75]], rtol=1e-12)


def test_softmax_dominance_limit():
    out = softmax_rows([[0.0, 40.0]]).weights
    assert out[0, 1] >= 1 - 1e-12


def test_softmax_scale_applies():
    out = softmax_rows([[0.0, 2 * math.log(3)]], scale=0.5).weights
    np.testing.assert_allclose(out, [[0.25, 0.75]], rtol=1e-12)


def test_softmax_rejects_nonfinite_and_names_row():
    with pytest.raises(ValidationError, match="row 1"):
        softmax_rows([[0.0, 1.0], [np.nan, 0.0]])
    with pytest.raises(ValidationError):
        softmax_rows([[0.0, 1.0]], scale=0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 9)), elements=finite))
def test_softmax_rows_sum_to_one(x):
    w = softmax_rows(x).weights
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(w >= 0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 8)), elements=finite), finite)
def test_softmax_shift_invariant(x, shift):
    a = softmax_rows(x).weights
    b = softmax_rows(x + shift).weights
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_entropy_examples():
    assert entropy_nats([0, 0, 1, 0]) == 0.0
    assert entropy_nats(np.full(10, 0.1)) == pytest.approx(math.log(10), abs=1e-12)
    assert entropy_nats([0.5, 0.5]) == pytest.approx(0.6931, abs=1e-4)


def test_n_eff_examples():
    assert n_eff([1.0, 0.0, 0.0]) == 1.0
    assert n_eff(np.full(576, 1 / 576)) == pytest.approx(576, rel=1e-9)
    assert n_eff(ProbVector([0.5, 0.5])) == pytest.approx(2.0, rel=1e-12)


@pytest.mark.parametrize("bad", [[0.5, 0.4], [1.2, -0.2], [], [np.nan, 1.0]])
def test_entropy_rejects_invalid(bad):
    with pytest.raises(ValidationError):
        entropy_nats(bad)


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 10)), st.randoms(use_true_random=False))
def test_n_eff_bounds_and_permutation(w, r):
    if w.sum() == 0:
        w = w + 1.0
    p = w / w.sum()
    h = entropy_nats(p)
    assert -1e-12 <= h <= math.log(len(p)) + 1e-9
    assert 1 - 1e-9 <= n_eff(p) <= len(p) + 1e-9
    q = list(p)
    r.shuffle(q)
    assert entropy_nats(np.array(q)) == pytest.approx(h, abs=1e-12)


def test_n_eff_extremes_only_at_uniform_and_one_hot():
    n = 8
    assert n_eff(np.full(n, 1 / n)) == pytest.approx(n)
    near = np.full(n, 1 / n)
    near[0] += 1e-3
    near[1] -= 1e-3
    assert n_eff(near) < n - 1e-7
    assert n_eff(np.eye(n)[3]) == 1.0
    assert n_eff([0.999, 0.001] + [0.0] * 6) > 1.0


def test_cosine_examples():
    v = np.array([0.3, -2.0, 5.0])
    assert cosine_similarity(v, v) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 0], [-1, 0]) == -1.0
    with pytest.raises(ValidationError, match="zero vector"):
        cosine_similarity([0, 0], [1, 0])
    with pytest.raises(ValidationError):
        cosine_similarity([1, 0, 0], [1, 0])


def test_attention_map_validation():
    AttentionMap((0,), (0, 1), [[0.3, 0.7]])
    with pytest.raises(ValidationError, match="sums"):
        AttentionMap((0,), (0, 1), [[0.3, 0.6]])
    with pytest.raises(ValidationError, match="duplicate"):
        AttentionMap((0,), (1, 1), [[0.3, 0.7]])
    with pytest.raises(ValidationError):
        AttentionMap((0,), (0, 1), [[1.2, -0.2]])
    with pytest.raises(ValidationError, match="shape"):
        AttentionMap((0, 1), (0, 1), [[0.3, 0.7]])


def test_attention_map_head_mean_and_restrict():
    m = AttentionMap((9,), (0, 1, 2), [[[0.5, 0.5, 0.0]], [[0.0, 0.5, 0.5]]])
    np.testing.assert_allclose(m.head_mean(), [[0.25, 0.5, 0.25]])
    r = m.restrict_cols([0, 2])
    assert r.col_ids == (0, 2)
    np.testing.assert_allclose(r.weights, [[[1.0, 0.0]], [[0.0, 1.0]]])


def test_score_vector_invariants():
    with pytest.raises(ValidationError):
        ScoreVector((0, 1), [0.1])
    with pytest.raises(ValidationError):
        ScoreVector((0, 0), [0.1, 0.2])
    with pytest.raises(ValidationError):
        ScoreVector((0,), [-0.1])
