"""Finite-difference checks shared by the unit and acceptance suites."""
import numpy as np

from mccgraph import gvae, lrgnn
from mccgraph.graph import Graph, build_laplacian, normalize_adjacency
from mccgraph.numeric import finite_diff_grad, rel_error, softmax, softmax_cross_entropy


def six_node_graph(seed=3) -> Graph:
    rng = np.random.default_rng(seed)
    a = np.triu(rng.uniform(0, 1, (6, 6)), 1)
    a[a < 0.3] = 0.0
    return Graph(a + a.T, rng.standard_normal((6, 3)), rng.integers(0, 32, 6))


def _jitter(params, rng):
    # move off the zero-bias ReLU kinks of a fresh initialization
    return params.replace([a + rng.normal(0.0, 0.2, a.shape) for a in params.as_list()])


def gvae_gradient_error(seed=3, root_weight=True) -> float:
    g = six_node_graph(seed)
    rng = np.random.default_rng(seed + 100)
    cfg = gvae.GVAEConfig(hidden1=5, hidden2=4, latent_dim=3, root_weight=root_weight)
    p = _jitter(gvae.GVAEParams.init(3, rng, cfg), rng)
    eps = rng.standard_normal((6, 3))
    _, _, grads = gvae.loss_and_grads(g, p, eps, cfg)

    def loss(arrays):
        q = p.replace(arrays)
        mu, lv = gvae.encode(g, q)
        a_hat, x_hat = gvae.decode(gvae.reparameterize(mu, lv, epsilon=eps), q)
        return gvae.gvae_loss(g, a_hat, x_hat, gvae.kl_divergence(mu, lv), 3, cfg)[0]

    num = finite_diff_grad(loss, p.as_list())
    return max(rel_error(a, b) for a, b in zip(grads, num))


def lrgnn_gradient_error(seed=3, lambda_reg=0.5, root_weight=True) -> float:
    g = six_node_graph(seed)
    rng = np.random.default_rng(seed + 200)
    cfg = lrgnn.LRGNNConfig(n_features=3, hidden=5, gcn1=5, gcn2=4, dropout=0.0,
                            lambda_reg=lambda_reg, root_weight=root_weight)
    p = _jitter(lrgnn.LRGNNParams.init(rng, cfg), rng)
    mask = np.array([1, 1, 0, 1, 0, 1], dtype=bool)
    _, lap = build_laplacian(g)
    _, _, grads = lrgnn.loss_and_grads(normalize_adjacency(g), lap, g.features, g.labels, mask, p)

    def loss(arrays):
        logits = lrgnn.forward(g, p.replace(arrays))
        ce = softmax_cross_entropy(logits, g.labels, mask)[0]
        return ce + lambda_reg * lrgnn.laplacian_penalty(softmax(logits), lap)

    num = finite_diff_grad(loss, p.as_list())
    return max(rel_error(a, b) for a, b in zip(grads, num))
