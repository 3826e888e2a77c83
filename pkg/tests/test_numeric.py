import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mccgraph.numeric import (OptimizerState, ShapeError, adaptive_moment_update, dense_forward,
                              finite_diff_grad, log_softmax, rel_error, sigmoid, softmax,
                              softmax_cross_entropy)

finite = st.floats(-50, 50, allow_nan=False)


def test_dense_forward_examples():
    assert dense_forward(np.array([[0.0]]), np.eye(1), np.zeros(1), "relu")[0, 0] == 0.0
    assert dense_forward(np.array([[2.0]]), np.array([[3.0]]), np.array([-6.0]), "sigmoid")[0, 0] == 0.5
    out = dense_forward(np.array([[1.0, 2.0]]), np.array([[1.0], [1.0]]), np.zeros(1), "relu")
    assert out[0, 0] == 3.0


def test_dense_forward_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 1\)|\(2, 1\).*\(2, 3\)"):
        dense_forward(np.zeros((2, 3)), np.zeros((2, 1)), np.zeros(1))


@given(arrays(np.float64, (4, 3), elements=finite))
def test_dense_identity_map(x):
    assert np.array_equal(dense_forward(x, np.eye(3), np.zeros(3), "identity"), x)


def test_cross_entropy_examples():
    loss, _ = softmax_cross_entropy([[0.0, 0.0]], [0], [True])
    assert loss == pytest.approx(np.log(2))
    loss, _ = softmax_cross_entropy([[1000.0, 0.0]], [0], [True])
    assert loss == pytest.approx(0.0, abs=1e-12)
    loss, _ = softmax_cross_entropy([[1.0, 2.0]], [0], [True])
    assert loss == pytest.approx(np.log1p(np.e), rel=1e-12)


def test_cross_entropy_empty_mask():
    with pytest.raises(ValueError, match="no training nodes"):
        softmax_cross_entropy(np.zeros((3, 2)), [0, 1, 0], [False] * 3)


@given(arrays(np.float64, (5, 4), elements=finite), st.lists(st.integers(0, 3), min_size=5, max_size=5),
       st.lists(st.booleans(), min_size=5, max_size=5).filter(any))
def test_cross_entropy_grad_rows_sum_to_zero(logits, labels, mask):
    _, grad = softmax_cross_entropy(logits, labels, mask)
    assert np.allclose(grad.sum(axis=1), 0.0, atol=1e-12)
    assert np.all(grad[~np.array(mask)] == 0.0)


def test_cross_entropy_grad_matches_finite_difference(rng):
    logits = rng.standard_normal((4, 3))
    labels, mask = [0, 2, 1, 1], [True, False, True, True]
    _, grad = softmax_cross_entropy(logits, labels, mask)
    num = finite_diff_grad(lambda p: softmax_cross_entropy(p[0], labels, mask)[0], [logits])[0]
    assert rel_error(grad, num) < 1e-6


@given(arrays(np.float64, (3, 5), elements=finite))
def test_softmax_rows(logits):
    p = softmax(logits)
    assert np.allclose(p.sum(axis=1), 1.0)
    assert np.allclose(np.log(np.maximum(p, 1e-300)), log_softmax(logits), atol=1e-9) or np.any(p == 0)


def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0])]
    out = adaptive_moment_update(p, [np.zeros(2)], OptimizerState())
    assert np.array_equal(out[0], p[0])


def test_adam_first_step_moves_by_lr_times_sign():
    p = [np.array([1.0, 1.0])]
    out = adaptive_moment_update(p, [np.array([0.3, -5.0])], OptimizerState(lr=0.01))
    # m_hat = g, v_hat = g^2 after bias correction
    assert np.allclose(out[0], [1.0 - 0.01, 1.0 + 0.01], atol=1e-8)


def test_adam_deterministic_and_step_counter(rng):
    p = [rng.standard_normal((2, 3)), rng.standard_normal(3)]
    g = [rng.standard_normal((2, 3)), rng.standard_normal(3)]
    s1 = OptimizerState()
    adaptive_moment_update(p, g, s1)
    s2 = s1.copy()
    a = adaptive_moment_update(p, g, s1)
    b = adaptive_moment_update(p, g, s2)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert s1.step == 2


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adaptive_moment_update([np.zeros(2)], [np.zeros(3)], OptimizerState())


def test_finite_diff_examples():
    assert finite_diff_grad(lambda p: float(p[0][0] ** 2), [np.array([3.0])])[0][0] == pytest.approx(6.0, abs=1e-6)
    assert np.all(finite_diff_grad(lambda p: 7.0, [np.ones((2, 2))])[0] == 0.0)
    g = finite_diff_grad(lambda p: float(sigmoid(p[0][0])), [np.array([0.0])])[0][0]
    assert g == pytest.approx(0.25, abs=1e-6)


def test_finite_diff_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        finite_diff_grad(lambda p: float("nan"), [np.ones(1)])
