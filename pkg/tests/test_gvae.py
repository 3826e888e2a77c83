import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mccgraph import gvae
from mccgraph.graph import Graph, complete_graph, normalize_adjacency
from mccgraph.gvae import (GVAEConfig, GVAEParams, decode, encode, gvae_loss, kl_divergence,
                           prune_edges, reparameterize, rescale_similarity, train_gvae)

from conftest import small_graph
from gradcheck import gvae_gradient_error, six_node_graph


def test_reparameterize_uses_half_logvar():
    s = reparameterize(np.array([[1.0]]), np.array([[np.log(4.0)]]), epsilon=np.array([[0.5]]))
    assert s.z[0, 0] == pytest.approx(2.0)


def test_reparameterize_needs_draw():
    with pytest.raises(ValueError):
        reparameterize(np.zeros((1, 1)), np.zeros((1, 1)))


def test_kl_examples():
    assert kl_divergence(np.zeros((3, 2)), np.zeros((3, 2))) == 0.0
    assert kl_divergence(np.array([[1.0]]), np.array([[0.0]])) == 0.5


@given(arrays(np.float64, (4, 3), elements=st.floats(-5, 5)),
       arrays(np.float64, (4, 3), elements=st.floats(-5, 5)))
def test_kl_nonnegative(mu, logvar):
    assert kl_divergence(mu, logvar) >= 0.0


def test_decode_examples():
    p = GVAEParams.init(2, np.random.default_rng(0), GVAEConfig(latent_dim=3))
    a_hat, _ = decode(np.zeros((4, 3)), p)
    assert np.all(a_hat == 0.5)
    a_hat, _ = decode(np.eye(3), p)
    assert a_hat[0, 1] == 0.5 and a_hat[0, 0] == pytest.approx(1 / (1 + np.exp(-1)))
    z = np.random.default_rng(1).standard_normal((5, 3))
    a_hat, _ = decode(z, p)
    assert np.array_equal(a_hat, a_hat.T)


def test_bce_examples():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    x = np.zeros((2, 1))
    cfg = GVAEConfig(feature_weight=0.0)
    total, parts = gvae_loss(a, a.copy(), x, 0.0, 1, cfg, features=x)
    assert parts["bce"] < 1e-6
    _, parts = gvae_loss(a, np.full((2, 2), 0.5), x, 0.0, 1, cfg, features=x)
    assert parts["bce"] == pytest.approx(np.log(2))
    _, parts = gvae_loss(a, np.full((2, 2), 0.6), x, 0.0, 1, cfg, features=x)
    assert parts["bce"] == pytest.approx(-(2 * np.log(0.6) + 2 * np.log(0.4)) / 4, rel=1e-12)


def test_loss_matches_forward_composition():
    g = six_node_graph()
    cfg = GVAEConfig(hidden1=5, hidden2=4, latent_dim=3)
    p = GVAEParams.init(3, np.random.default_rng(0), cfg)
    eps = np.random.default_rng(1).standard_normal((6, 3))
    total, _, _ = gvae.loss_and_grads(g, p, eps, cfg)
    mu, lv = encode(g, p)
    a_hat, x_hat = decode(reparameterize(mu, lv, epsilon=eps), p)
    assert total == pytest.approx(gvae_loss(g, a_hat, x_hat, kl_divergence(mu, lv), 3, cfg)[0],
                                  rel=1e-12)


@pytest.mark.parametrize("root_weight", [True, False])
def test_gradients(root_weight):
    assert gvae_gradient_error(3, root_weight) < 1e-4


def test_saturated_logits_have_zero_gradient():
    s = np.array([[0.0, 40.0], [40.0, 0.0]])
    _, grad = gvae._bce_logits(s, np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert grad[0, 1] == 0.0 and grad[0, 0] != 0.0


def test_train_one_step_and_determinism():
    g = small_graph(8, 3, 2)
    r = train_gvae(g, 1, seed=4, config=GVAEConfig(hidden1=6, hidden2=4, latent_dim=3))
    assert r.steps == 1
    r1 = train_gvae(g, 20, seed=4)
    r2 = train_gvae(g, 20, seed=4)
    assert all(np.array_equal(a, b) for a, b in zip(r1.params.as_list(), r2.params.as_list()))


def test_complete_graph_beats_uniform_predictor():
    x = np.random.default_rng(0).standard_normal((10, 3))
    g = complete_graph(x, np.zeros(10, dtype=int))
    r = train_gvae(g, 200, seed=0)
    mu, lv = encode(g, r.params)
    a_hat, _ = decode(mu, r.params)
    assert gvae.adjacency_bce(a_hat, g.adjacency) < np.log(2)


def test_training_reduces_loss_across_seeds(cohort_80):
    x, y = cohort_80
    g = complete_graph(x, y)
    wins = sum(r.losses[-1] <= r.losses[0] for r in (train_gvae(g, 60, seed=s) for s in range(5)))
    assert wins == 5


def test_prune_examples():
    a = np.array([[0.9, 0.49, 0.51], [0.49, 0.9, 0.2], [0.51, 0.2, 0.9]])
    out = prune_edges(a, 0.5)
    assert out[0, 1] == 0.0 and out[0, 2] == 0.51
    assert np.array_equal(prune_edges(a, 0.0), a - np.diag(np.diag(a)))
    assert not prune_edges(np.full((3, 3), 0.999), 1.0).any()
    with pytest.raises(ValueError):
        prune_edges(a, 1.5)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.floats(0.001, 0.999)), st.floats(0, 1))
def test_prune_output_is_valid_graph(m, tau):
    m = 0.5 * (m + m.T)
    Graph(prune_edges(m, tau), np.zeros((6, 1)), np.zeros(6))


def test_rescale_similarity_is_rank_quantile():
    a = np.array([[0.0, 0.9, 0.2, 0.5],
                  [0.9, 0.0, 0.7, 0.1],
                  [0.2, 0.7, 0.0, 0.3],
                  [0.5, 0.1, 0.3, 0.0]])
    q = rescale_similarity(a)
    # six pairs ranked 0.1 < 0.2 < 0.3 < 0.5 < 0.7 < 0.9 map to 0, 0.2, ..., 1
    assert q[1, 3] == 0.0 and q[0, 1] == 1.0 and q[0, 3] == pytest.approx(0.6)
    assert np.array_equal(q, q.T) and not np.diag(q).any()
    assert np.all(rescale_similarity(np.full((3, 3), 0.8))[~np.eye(3, dtype=bool)] == 0.5)
    assert np.mean(prune_edges(rescale_similarity(a), 0.5)[np.triu_indices(4, 1)] > 0) == 0.5


def _permute(g, perm):
    return Graph(g.adjacency[np.ix_(perm, perm)], g.features[perm], g.labels[perm])


def test_encode_decode_permutation_equivariant():
    g = small_graph(5, 3, 9)
    p = GVAEParams.init(3, np.random.default_rng(0))
    mu, lv = encode(g, p)
    a_hat, x_hat = decode(mu, p)
    for perm in (np.array([4, 2, 0, 1, 3]), np.array([1, 0, 3, 4, 2])):
        mu2, lv2 = encode(_permute(g, perm), p)
        a2, x2 = decode(mu2, p)
        assert np.allclose(mu2, mu[perm]) and np.allclose(lv2, lv[perm])
        assert np.allclose(a2, a_hat[np.ix_(perm, perm)]) and np.allclose(x2, x_hat[perm])
