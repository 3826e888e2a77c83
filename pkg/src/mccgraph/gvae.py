"""Graph variational autoencoder: GCN encoder, Gaussian latent, inner-product decoder."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .graph import Graph, normalize_adjacency, sanitize
from .numeric import OptimizerState, ShapeError, adaptive_moment_update, glorot, relu, sigmoid

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W_mu", "b_mu", "W_logvar", "b_logvar", "W_feat", "b_feat",
               "R1", "R2")


class TrainingDivergence(RuntimeError):
    """Loss became non-finite during training."""


@dataclass
class GVAEConfig:
    hidden1: int = 32
    hidden2: int = 16
    latent_dim: int = 16
    lr: float = 0.01
    beta_kl: float = 1.0
    feature_weight: float = 0.1
    root_weight: bool = True
    epochs: int = 300


@dataclass
class GVAEParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W_mu: np.ndarray
    b_mu: np.ndarray
    W_logvar: np.ndarray
    b_logvar: np.ndarray
    W_feat: np.ndarray
    b_feat: np.ndarray
    # self-connection weights of the two GCN layers; None disables them
    R1: np.ndarray | None = None
    R2: np.ndarray | None = None

    @classmethod
    def init(cls, n_features: int, rng: np.random.Generator, config: GVAEConfig = GVAEConfig()):
        h1, h2, d = config.hidden1, config.hidden2, config.latent_dim
        return cls(
            W1=glorot(rng, n_features, h1), b1=np.zeros(h1),
            W2=glorot(rng, h1, h2), b2=np.zeros(h2),
            W_mu=glorot(rng, h2, d), b_mu=np.zeros(d),
            # start with small posterior variance
            W_logvar=glorot(rng, h2, d) * 0.1, b_logvar=np.full(d, -2.0),
            W_feat=glorot(rng, d, n_features), b_feat=np.zeros(n_features),
            R1=glorot(rng, n_features, h1) if config.root_weight else None,
            R2=glorot(rng, h1, h2) if config.root_weight else None,
        )

    @property
    def latent_dim(self) -> int:
        return self.W_mu.shape[1]

    @property
    def names(self) -> list[str]:
        return [k for k in PARAM_NAMES if getattr(self, k) is not None]

    def as_list(self) -> list[np.ndarray]:
        return [getattr(self, k) for k in self.names]

    def replace(self, arrays) -> "GVAEParams":
        return GVAEParams(**dict(zip(self.names, arrays)))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.as_list())


@dataclass
class LatentSample:
    mu: np.ndarray
    logvar: np.ndarray
    z: np.ndarray
    epsilon_draw: np.ndarray


@dataclass
class _EncoderCache:
    ax: np.ndarray
    pre1: np.ndarray
    h1: np.ndarray
    h2: np.ndarray


def _encode(a_norm, x, p: GVAEParams, ax=None):
    # A~ (H W) is cheaper than (A~ H) W when the layer narrows
    if ax is None:
        ax = a_norm @ x
    pre1 = ax @ p.W1 + p.b1
    if p.R1 is not None:
        pre1 = pre1 + x @ p.R1
    h1 = relu(pre1)
    h2 = a_norm @ (h1 @ p.W2) + p.b2
    if p.R2 is not None:
        h2 = h2 + h1 @ p.R2
    mu = h2 @ p.W_mu + p.b_mu
    logvar = h2 @ p.W_logvar + p.b_logvar
    return mu, logvar, _EncoderCache(ax, pre1, h1, h2)


def encode(g: Graph, params: GVAEParams, a_norm: np.ndarray | None = None):
    """Latent mean and log-variance per node, ``(mu, logvar)``."""
    if params.W1.shape[0] != g.n_features:
        raise ShapeError(f"graph has {g.n_features} features, encoder expects {params.W1.shape[0]}")
    if a_norm is None:
        a_norm = normalize_adjacency(g)
    mu, logvar, _ = _encode(a_norm, g.features, params)
    return mu, logvar


def reparameterize(mu, logvar, rng: np.random.Generator | None = None,
                   epsilon: np.ndarray | None = None) -> LatentSample:
    """``z = mu + exp(logvar / 2) * eps``; pass ``epsilon`` to fix the draw."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ShapeError(f"mu {mu.shape} vs logvar {logvar.shape}")
    if epsilon is None:
        if rng is None:
            raise ValueError("need an rng or an explicit epsilon")
        epsilon = rng.standard_normal(mu.shape)
    epsilon = np.asarray(epsilon, dtype=np.float64)
    return LatentSample(mu, logvar, mu + np.exp(0.5 * logvar) * epsilon, epsilon)


def kl_divergence(mu, logvar) -> float:
    """KL(N(mu, exp(logvar)) || N(0, 1)) summed over every entry."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    # expm1 - logvar keeps precision near the prior where 1 + lv - exp(lv) cancels
    return float(0.5 * np.sum(mu * mu + np.expm1(logvar) - logvar))


def decode(sample: LatentSample | np.ndarray, params: GVAEParams):
    """Inner-product adjacency ``sigmoid(z z^T)`` and linear feature reconstruction."""
    z = sample.z if isinstance(sample, LatentSample) else np.asarray(sample, dtype=np.float64)
    a_hat = sigmoid(z @ z.T)
    x_hat = z @ params.W_feat + params.b_feat
    return a_hat, x_hat


def adjacency_bce(a_hat, a) -> float:
    p = np.clip(a_hat, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(a * np.log(p) + (1.0 - a) * np.log1p(-p)))


def gvae_loss(g: Graph | np.ndarray, a_hat, x_hat, kl: float, latent_dim: int,
              config: GVAEConfig = GVAEConfig(), features: np.ndarray | None = None):
    """Total GVAE loss and its parts.

    ``total = BCE(a_hat, A) + beta_kl * kl / (n * latent_dim) + w_x * MSE(x_hat, X)``
    """
    if isinstance(g, Graph):
        a, x = g.adjacency, g.features
    else:
        a, x = np.asarray(g, dtype=np.float64), features
    if a_hat.shape != a.shape or x_hat.shape != x.shape:
        raise ShapeError(f"a_hat {a_hat.shape} vs A {a.shape}; x_hat {x_hat.shape} vs X {x.shape}")
    n = a.shape[0]
    bce = adjacency_bce(a_hat, a)
    kl_term = config.beta_kl * kl / (n * latent_dim)
    mse = float(np.mean((x_hat - x) ** 2))
    total = bce + kl_term + config.feature_weight * mse
    return total, {"bce": bce, "kl": kl_term, "mse": mse}


# logit of 1 - PROB_CLAMP: clamping probabilities equals clamping logits here
_LOGIT_CLAMP = float(np.log1p(-PROB_CLAMP) - np.log(PROB_CLAMP))


def _bce_logits(s, a):
    """Clamped adjacency BCE from logits ``s`` and its gradient w.r.t. ``s``.

    Uses ``BCE = softplus(s) - A s`` on the clamped logits; the gradient is
    ``sigmoid(s) - A`` inside the clamp band and 0 outside. With |s| bounded
    by the clamp, ``exp(s)`` cannot overflow, so no branch on sign is needed.
    """
    n2 = s.size
    sc = np.clip(s, -_LOGIT_CLAMP, _LOGIT_CLAMP)
    e = np.exp(sc)
    bce = (float(np.log1p(e).sum()) - float(np.vdot(a, sc))) / n2
    p = e / (1.0 + e)
    p -= a
    np.copyto(p, 0.0, where=sc != s)
    p /= n2
    return bce, p


def loss_and_grads(g: Graph, params: GVAEParams, epsilon: np.ndarray,
                   config: GVAEConfig = GVAEConfig(), a_norm: np.ndarray | None = None,
                   ax: np.ndarray | None = None):
    """Forward pass with a fixed ``epsilon`` draw and hand-derived gradients.

    Returns ``(total, parts, grads)`` with ``grads`` aligned to ``params.names``.
    """
    a, x = g.adjacency, g.features
    n = g.n
    d = params.latent_dim
    if a_norm is None:
        a_norm = normalize_adjacency(g)
    mu, logvar, c = _encode(a_norm, x, params, ax)
    std = np.exp(0.5 * logvar)
    z = mu + std * epsilon
    bce, ds = _bce_logits(z @ z.T, a)
    x_hat = z @ params.W_feat + params.b_feat
    kl = kl_divergence(mu, logvar)
    kl_term = config.beta_kl * kl / (n * d)
    mse = float(np.mean((x_hat - x) ** 2))
    total = bce + kl_term + config.feature_weight * mse
    parts = {"bce": bce, "kl": kl_term, "mse": mse}

    # ds is symmetric, so d/dz of sum(ds * z z^T) is 2 ds z
    dz = 2.0 * (ds @ z)
    dx_hat = (2.0 * config.feature_weight / x.size) * (x_hat - x)
    dW_feat = z.T @ dx_hat
    db_feat = dx_hat.sum(axis=0)
    dz += dx_hat @ params.W_feat.T

    kl_scale = config.beta_kl / (n * d)
    dmu = dz + kl_scale * mu
    dlogvar = dz * epsilon * 0.5 * std + kl_scale * 0.5 * np.expm1(logvar)

    dW_mu = c.h2.T @ dmu
    db_mu = dmu.sum(axis=0)
    dW_lv = c.h2.T @ dlogvar
    db_lv = dlogvar.sum(axis=0)
    dh2 = dmu @ params.W_mu.T + dlogvar @ params.W_logvar.T

    grads = {"W_mu": dW_mu, "b_mu": db_mu, "W_logvar": dW_lv, "b_logvar": db_lv,
             "W_feat": dW_feat, "b_feat": db_feat}
    adh2 = a_norm @ dh2  # A~ is symmetric
    grads["W2"] = c.h1.T @ adh2
    grads["b2"] = dh2.sum(axis=0)
    dh1 = adh2 @ params.W2.T
    if params.R2 is not None:
        grads["R2"] = c.h1.T @ dh2
        dh1 += dh2 @ params.R2.T
    dpre1 = dh1 * (c.pre1 > 0)
    grads["W1"] = c.ax.T @ dpre1
    grads["b1"] = dpre1.sum(axis=0)
    if params.R1 is not None:
        grads["R1"] = x.T @ dpre1
    return total, parts, [grads[k] for k in params.names]


@dataclass
class GVAEResult:
    params: GVAEParams
    a_hat: np.ndarray
    mu: np.ndarray
    losses: list = field(default_factory=list)
    steps: int = 0


def train_gvae(g: Graph, epochs: int | None = None, seed: int | np.random.SeedSequence = 0,
               config: GVAEConfig = GVAEConfig()) -> GVAEResult:
    """Full-batch training with a fresh reparameterization draw every epoch.

    The returned ``a_hat`` is the mean reconstruction (``eps = 0``).
    """
    epochs = config.epochs if epochs is None else epochs
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    rng = np.random.default_rng(seed)
    params = GVAEParams.init(g.n_features, rng, config)
    state = OptimizerState(lr=config.lr)
    a_norm = normalize_adjacency(g)
    ax = a_norm @ g.features
    losses = []
    arrays = params.as_list()
    for epoch in range(epochs):
        eps = rng.standard_normal((g.n, params.latent_dim))
        total, parts, grads = loss_and_grads(g, params, eps, config, a_norm, ax)
        if not np.isfinite(total):
            raise TrainingDivergence(
                f"GVAE loss became non-finite at epoch {epoch + 1}/{epochs} (parts={parts})")
        losses.append(total)
        arrays = adaptive_moment_update(arrays, grads, state)
        params = params.replace(arrays)
    if not params.all_finite():
        raise TrainingDivergence(f"GVAE parameters became non-finite after {epochs} epochs")
    mu, _ = encode(g, params, a_norm)
    a_hat, _ = decode(mu, params)
    return GVAEResult(params, a_hat, mu, losses, state.step)


def prune_edges(a_hat, tau: float) -> np.ndarray:
    """Zero entries below ``tau``, keep the rest as weights, then sanitize."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {tau}")
    a_hat = np.asarray(a_hat, dtype=np.float64)
    return sanitize(np.where(a_hat < tau, 0.0, a_hat))


def rescale_similarity(a_hat) -> np.ndarray:
    """Map each off-diagonal entry of ``a_hat`` to its similarity quantile in [0, 1].

    A reconstruction of a dense graph sits close to 1 everywhere, so an
    absolute threshold would keep every edge. Ranking keeps the order of the
    pairwise similarities and makes ``tau`` the fraction of pairs judged least
    similar. Ties share their average rank; a constant matrix maps to 0.5.
    """
    a_hat = np.asarray(a_hat, dtype=np.float64)
    n = a_hat.shape[0]
    out = np.zeros_like(a_hat)
    if n < 2:
        return out
    iu = np.triu_indices(n, 1)
    vals = a_hat[iu]
    if vals.size == 1:
        q = np.array([0.5])
    else:
        q = (rankdata(vals) - 1.0) / (vals.size - 1)
    out[iu] = q
    out.T[iu] = q
    return out
