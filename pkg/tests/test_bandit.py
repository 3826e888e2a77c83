import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from mccgraph.bandit import (COLD_START, CONTEXT_DIM, ArmStats, CBState, LassoModel,
                             cb_select_update, epsilon_greedy_select, extract_context, lambda_max,
                             lasso_fit, lasso_objective, mab_reward, mab_select_update,
                             make_policy)
from mccgraph.graph import Graph, complete_graph


def test_egreedy_examples():
    assert epsilon_greedy_select([0.2, 0.9, 0.5], 0.0) == 1
    assert epsilon_greedy_select([0.5, 0.5], 0.0) == 0
    with pytest.raises(ValueError):
        epsilon_greedy_select([], 0.0)
    with pytest.raises(ValueError):
        epsilon_greedy_select([0.1], 1.5)


def test_egreedy_full_exploration_uniform():
    rng = np.random.default_rng(0)
    counts = np.bincount([epsilon_greedy_select([0.1, 0.9, 0.3, 0.2], 1.0, rng)
                          for _ in range(100_000)], minlength=4)
    freq = counts / counts.sum()
    assert np.all(np.abs(freq - 0.25) < 0.01)
    assert chisquare(counts).pvalue > 1e-3


@given(st.lists(st.sampled_from([0.0, 0.25, 0.5, 1.0]), min_size=1, max_size=5))
def test_egreedy_zero_is_first_argmax(acc):
    assert epsilon_greedy_select(acc, 0.0) == acc.index(max(acc))


def _stats(s, n_i, n, alpha):
    st_ = ArmStats.new(1, alpha)
    st_.successes[0], st_.trials[0], st_.total = s, n_i, n
    return st_


def test_mab_reward_examples():
    assert mab_reward(_stats(0, 0, 0, 1.0), 0) == 0.0
    assert mab_reward(_stats(1, 2, 3, 1.0), 0) == pytest.approx(0.5 + math.sqrt(math.log(4) / 2), abs=1e-12)
    assert mab_reward(_stats(3, 4, 9, 0.0), 0) == 0.75


def test_mab_bonus_shrinks_with_trials():
    bonus = [mab_reward(_stats(0, k, 10, 1.0), 0) for k in range(1, 11)]
    assert all(a > b for a, b in zip(bonus, bonus[1:]))


def test_mab_first_call_and_success_rule():
    stats = ArmStats.new(3)
    chosen, stats = mab_select_update(stats, [0.2, 0.9, 0.5])
    assert chosen == 0 and stats.trials.tolist() == [1, 0, 0] and stats.successes.tolist() == [1, 0, 0]
    assert stats.best_accuracy == 0.9
    stats = ArmStats(np.array([0, 0]), np.array([1, 1]), 2, 1.0, 0.8)
    chosen, new = mab_select_update(stats, [0.9, 0.1])
    assert chosen == 0 and new.successes[0] == 1 and new.best_accuracy == 0.9
    with pytest.raises(ValueError):
        mab_select_update(stats, [0.1])


@settings(max_examples=50)
@given(st.integers(1, 6), st.lists(st.floats(0, 1), min_size=1, max_size=120), st.floats(0, 2))
def test_arm_stats_invariants(k, stream, alpha):
    stats = ArmStats.new(k, alpha)
    best = 0.0
    for t in range(len(stream) // k):
        acc = stream[t * k:(t + 1) * k]
        total = stats.total
        _, stats = mab_select_update(stats, acc)
        stats.check()
        assert stats.total == total + 1
        assert stats.best_accuracy >= best
        best = stats.best_accuracy


def test_context_examples():
    x = np.zeros((4, 2))
    mu = np.zeros((4, 3))
    ctx = extract_context(Graph(np.zeros((4, 4)), x, [0] * 4), mu)
    assert ctx.shape == (CONTEXT_DIM,) and ctx[0] == 0 and ctx[3] == 0 and ctx[5] == 0
    ctx = extract_context(complete_graph(np.zeros((5, 1)), [0] * 5), np.zeros((5, 2)))
    assert ctx[0] == 1.0 and ctx[3] == 4.0
    path = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    ctx = extract_context(Graph(path, np.zeros((3, 1)), [0] * 3), np.ones((3, 2)))
    assert ctx[3] == pytest.approx(4 / 3) and ctx[5] == pytest.approx(4 / 3)
    assert ctx[6] == 1.0 and ctx[7] == 0.0


def _system(seed, n=20, p=5):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    y = x @ rng.standard_normal(p) + 0.3 * rng.standard_normal(n) + 2.0
    return x, y


def test_lasso_zero_lambda_matches_least_squares():
    for seed in range(5):
        x, y = _system(seed)
        m = lasso_fit(x, y, 0.0)
        xd = np.column_stack([np.ones(len(y)), x])
        coef = np.linalg.solve(xd.T @ xd, xd.T @ y)
        assert np.max(np.abs(m.beta - coef[1:]) / np.abs(coef[1:])) < 1e-6
        assert m.intercept == pytest.approx(coef[0], rel=1e-6)


def test_lasso_full_shrinkage():
    x, y = _system(1)
    lm = lambda_max(x, y)
    assert np.all(lasso_fit(x, y, lm).beta == 0.0)
    assert np.all(lasso_fit(x, y, 2 * lm).beta == 0.0)
    assert np.any(lasso_fit(x, y, 0.5 * lm).beta != 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.5))
def test_lasso_objective_monotone(seed, frac):
    x, y = _system(seed)
    m = lasso_fit(x, y, frac * lambda_max(x, y))
    path = np.array(m.objective_path)
    assert np.all(np.diff(path) <= 1e-12 * np.maximum(1.0, np.abs(path[:-1])))


def test_lasso_constant_target_and_duplicates():
    x, y = _system(2)
    m = lasso_fit(x, np.full(20, 3.5), 0.01)
    assert np.all(m.beta == 0) and m.intercept == 3.5
    a = lasso_fit(x, y, 0.05)
    b = lasso_fit(np.vstack([x, x]), np.concatenate([y, y]), 0.05)
    assert np.allclose(a.beta, b.beta, atol=1e-9) and a.intercept == pytest.approx(b.intercept)


def test_lasso_errors():
    with pytest.raises(ValueError):
        lasso_fit(np.zeros((1, 2)), [1.0])
    with pytest.raises(ValueError):
        lasso_fit(np.zeros((3, 2)), [1.0, 2.0])


def test_cb_cold_start_uniform():
    rng = np.random.default_rng(0)
    ctx = np.zeros((4, CONTEXT_DIM))
    picks = [cb_select_update(CBState(), ctx, lambda i: 0.0, rng)[0] for _ in range(10_000)]
    freq = np.bincount(picks, minlength=4) / 10_000
    assert np.all(np.abs(freq - 0.25) < 0.02)


def _trained_state(beta):
    st_ = CBState(contexts=[np.zeros(CONTEXT_DIM)] * COLD_START, rewards=[0.0] * COLD_START)
    st_.model = LassoModel(np.asarray(beta, dtype=float), 0.0, 0.01)
    return st_


def test_cb_argmax_follows_model():
    beta = np.zeros(CONTEXT_DIM)
    beta[0] = 1.0
    ctx = np.zeros((3, CONTEXT_DIM))
    ctx[:, 0] = [0.2, 0.9, 0.5]
    chosen, new = cb_select_update(_trained_state(beta), ctx, lambda i: 0.5)
    assert chosen == 1 and len(new) == COLD_START + 1


def test_cb_argmax_invariant_to_constant_shift():
    rng = np.random.default_rng(3)
    beta = rng.standard_normal(CONTEXT_DIM)
    ctx = rng.standard_normal((5, CONTEXT_DIM))
    a, _ = cb_select_update(_trained_state(beta), ctx, lambda i: 0.0)
    shifted = _trained_state(beta)
    shifted.model.intercept = 17.0
    b, _ = cb_select_update(shifted, ctx, lambda i: 0.0)
    assert a == b


def test_cb_feedback_modes():
    rng = np.random.default_rng(0)
    ctx = np.random.default_rng(1).standard_normal((5, CONTEXT_DIM))
    _, one = cb_select_update(CBState(), ctx, lambda i: 0.1 * i, rng, "chosen")
    _, all_ = cb_select_update(CBState(), ctx, lambda i: 0.1 * i, rng, "all")
    assert len(one) == 1 and len(all_) == 5 and all_.rewards == [0.0, 0.1, 0.2, 0.30000000000000004, 0.4]


def test_make_policy():
    assert make_policy("egreedy", 3).name == "egreedy"
    assert make_policy("mab", 3).name == "mab"
    assert make_policy("cb", 3).name == "cb"
    with pytest.raises(ValueError):
        make_policy("ucb", 3)
