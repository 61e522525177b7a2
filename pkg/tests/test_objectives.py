import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vist.objectives import PveConfig, joint_loss, pve_loss, semantic_distance, similarity_matrix, text_anchor
from vist.tensorcore import Tensor, gradient_check


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def test_single_pair_loss_is_zero():
    assert abs(float(pve_loss(T([[1.0, 2.0, 3.0]]), T([[-2.0, 0.5, 1.0]])).data)) <= 1e-9


def test_uniform_similarity_gives_log_two():
    v = T([[1.0, 0.0], [1.0, 0.0]])
    t = T([[0.0, 1.0], [0.0, 1.0]])
    assert abs(float(pve_loss(v, t).data) - math.log(2)) <= 1e-9


def test_identity_alignment_small_temperature():
    e = np.eye(4)
    # log(1 + 3 exp(-100))
    assert float(pve_loss(T(e), T(e), tau=0.01).data) == pytest.approx(3 * math.exp(-100), rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(2, 5), st.integers(0, 10_000))
def test_cosine_scale_invariance(B, D, seed):
    rng = np.random.default_rng(seed)
    v, t = rng.normal(size=(B, D)), rng.normal(size=(B, D))
    base = float(pve_loss(T(v), T(t)).data)
    i = rng.integers(B)
    v2 = v.copy()
    v2[i] *= 10
    t2 = t.copy()
    t2[rng.integers(B)] *= 10
    assert abs(float(pve_loss(T(v2), T(t)).data) - base) < 1e-9
    assert abs(float(pve_loss(T(v), T(t2)).data) - base) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_loss_bounds(B, seed):
    rng = np.random.default_rng(seed)
    loss = float(pve_loss(T(rng.normal(size=(B, 3))), T(rng.normal(size=(B, 3)))).data)
    # cosine similarities lie in [-1, 1], so the loss is bounded by 2/tau + log B
    assert 0.0 <= loss <= 2 / 0.07 + math.log(B) + 1e-9


def test_dot_similarity_differs_from_cosine():
    v, t = T([[3.0, 0.0], [0.0, 1.0]]), T([[1.0, 0.0], [0.0, 2.0]])
    a = float(pve_loss(v, t, similarity="cosine").data)
    b = float(pve_loss(v, t, similarity="dot").data)
    assert a != b


def test_symmetric_averages_both_directions():
    rng = np.random.default_rng(0)
    v, t = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    fwd = float(pve_loss(T(v), T(t)).data)
    bwd = float(pve_loss(T(t), T(v)).data)
    assert float(pve_loss(T(v), T(t), symmetric=True).data) == pytest.approx((fwd + bwd) / 2, abs=1e-12)


def test_pve_errors():
    with pytest.raises(ValueError):
        pve_loss(T(np.ones((2, 3))), T(np.ones((3, 3))))
    with pytest.raises(ValueError):
        pve_loss(T(np.ones((2, 3))), T(np.ones((2, 3))), tau=0.0)
    with pytest.raises(FloatingPointError):
        pve_loss(T([[np.inf, 1.0]]), T([[1.0, 1.0]]), similarity="dot")
    with pytest.raises(ValueError):
        PveConfig(similarity="l1")


def test_pve_gradient():
    rng = np.random.default_rng(2)
    v, t = T(rng.normal(size=(4, 5)), True), T(rng.normal(size=(4, 5)), True)
    assert gradient_check(lambda x: pve_loss(x[0], x[1], symmetric=True), [v, t]) <= 1e-6


def test_text_anchor():
    emb = T([[1.0, 0.0], [3.0, 2.0], [5.0, 4.0]])
    np.testing.assert_allclose(text_anchor(emb).data, [3.0, 2.0])
    np.testing.assert_allclose(text_anchor(emb, [False, True, False]).data, [3.0, 2.0])
    np.testing.assert_allclose(text_anchor(emb, [True, True, False]).data, [5.0, 4.0])
    with pytest.raises(ValueError):
        text_anchor(emb, [True, True, True])


def test_text_anchor_batched():
    emb = T(np.arange(12, dtype=float).reshape(2, 3, 2))
    out = text_anchor(emb, np.array([[False, True, True], [False, False, True]]))
    np.testing.assert_allclose(out.data, [[0.0, 1.0], [7.0, 8.0]])


def test_joint_loss():
    lm, pve = T(2.0), T(0.5)
    assert float(joint_loss(lm, pve, 0.0).data) == 2.0
    assert float(joint_loss(lm, pve, 1.0).data) == 2.5
    with pytest.raises(ValueError):
        joint_loss(lm, pve, -1.0)


def test_similarity_matrix_cosine_diagonal():
    x = T(np.random.default_rng(0).normal(size=(3, 4)))
    np.testing.assert_allclose(np.diag(similarity_matrix(x, x).data), 1.0, atol=1e-12)


def test_semantic_distance():
    assert semantic_distance([1.0, 0.0], [2.0, 0.0]) == pytest.approx(0.0)
    assert semantic_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)
    assert semantic_distance([1.0, 0.0], [-1.0, 0.0]) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        semantic_distance([0.0, 0.0], [1.0, 0.0])
