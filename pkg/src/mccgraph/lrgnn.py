"""Laplacian-regularized GNN node classifier and evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .graph import N_CLASSES, Graph, build_laplacian, normalize_adjacency
from .numeric import (OptimizerState, ShapeError, adaptive_moment_update, glorot, relu,
                      softmax)
from .gvae import TrainingDivergence


@dataclass
class LRGNNConfig:
    n_features: int = 12
    hidden: int = 32
    gcn1: int = 32
    gcn2: int = 16
    n_classes: int = N_CLASSES
    dropout: float = 0.2
    lambda_reg: float = 0.01
    root_weight: bool = True
    lr: float = 0.01
    epochs: int = 400


# pre FFN, two GCN layers, post FFN, logit head
_LAYERS = ("pre", "gcn1", "gcn2", "post", "out")


@dataclass
class LRGNNParams:
    arrays: dict
    config: LRGNNConfig

    @classmethod
    def init(cls, rng: np.random.Generator, config: LRGNNConfig = LRGNNConfig()):
        c = config
        dims = {"pre": (c.n_features, c.hidden), "gcn1": (c.hidden, c.gcn1),
                "gcn2": (c.gcn1, c.gcn2), "post": (c.gcn2, c.hidden), "out": (c.hidden, c.n_classes)}
        arrays = {}
        for name in _LAYERS:
            fan_in, fan_out = dims[name]
            arrays[f"W_{name}"] = glorot(rng, fan_in, fan_out)
            arrays[f"b_{name}"] = np.zeros(fan_out)
            if name.startswith("gcn") and c.root_weight:
                arrays[f"R_{name}"] = glorot(rng, fan_in, fan_out)
        return cls(arrays, config)

    @property
    def names(self) -> list[str]:
        return list(self.arrays)

    def as_list(self) -> list[np.ndarray]:
        return list(self.arrays.values())

    def replace(self, new_arrays) -> "LRGNNParams":
        return LRGNNParams(dict(zip(self.arrays, new_arrays)), self.config)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays.values())


def _dropout_mask(rng, shape, rate):
    if rate <= 0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


# The core below is batched: every parameter carries a leading axis of size B
# and ``a_norm`` / ``m2`` are (B, n, n). Features, labels, dropout masks and
# the initial parameters are shared across the batch, so slice k of a batched
# run is the same computation as a single-graph run with the same seed.

def _forward(a_norm, x, w: dict, cfg: LRGNNConfig, train_mode: bool, rng):
    """Batched forward pass keeping every intermediate for backprop."""
    cache = {"x": x}
    pre = x @ w["W_pre"] + w["b_pre"][:, None, :]
    h = relu(pre)
    mask = _dropout_mask(rng, pre.shape[1:], cfg.dropout) if train_mode else None
    cache["pre"], cache["pre_mask"] = pre, mask
    h = h * mask if mask is not None else h
    for name in ("gcn1", "gcn2"):
        cache[f"{name}_in"] = h
        # A~ (H W) is cheaper than (A~ H) W when the layer narrows
        z = a_norm @ (h @ w[f"W_{name}"]) + w[f"b_{name}"][:, None, :]
        if f"R_{name}" in w:
            z = z + h @ w[f"R_{name}"]
        cache[f"{name}_z"] = z
        h = relu(z)
    cache["post_in"] = h
    post = h @ w["W_post"] + w["b_post"][:, None, :]
    h = relu(post)
    mask = _dropout_mask(rng, post.shape[1:], cfg.dropout) if train_mode else None
    cache["post"], cache["post_mask"] = post, mask
    h = h * mask if mask is not None else h
    cache["out_in"] = h
    logits = h @ w["W_out"] + w["b_out"][:, None, :]
    return logits, cache


def _t(a):
    return np.swapaxes(a, -1, -2)


def _batched_loss_and_grads(a_norm, m2, x, target, w: dict, cfg: LRGNNConfig,
                            train_mode: bool, rng):
    """Per-graph totals (B,), parts and batched gradients (dict).

    ``target`` is the (n, C) one-hot label matrix of the training rows divided
    by their count; all other rows are zero, so no other label is ever read.
    """
    logits, c = _forward(a_norm, x, w, cfg, train_mode, rng)
    b, n, k = logits.shape
    row_w = target.sum(axis=1)  # 1/|train| on training rows, else 0
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    ssum = e.sum(axis=-1, keepdims=True)
    probs = e / ssum
    # mean CE over training rows: -sum(target * (shifted - log ssum))
    ce = np.log(ssum[..., 0]) @ row_w - np.einsum("bij,ij->b", shifted, target)
    lam = cfg.lambda_reg
    coef = row_w[:, None]
    if lam != 0.0:
        # mean((Y - LY)^2) = sum(Y * (I-L)^2 Y) / size, gradient 2 (I-L)^2 Y / size
        q = m2 @ probs
        pen = np.einsum("bij,bij->b", probs, q) / (n * k)
        dprobs = (2.0 * lam / (n * k)) * q
        coef = coef + dprobs - np.sum(dprobs * probs, axis=-1, keepdims=True)
    else:
        pen = np.zeros(b)
    # CE gradient is row_w * probs - target; the penalty term rides on the softmax Jacobian
    dlogits = probs * coef - target
    total = ce + lam * pen

    grads = {}
    grads["W_out"] = _t(c["out_in"]) @ dlogits
    grads["b_out"] = dlogits.sum(axis=1)
    dh = dlogits @ _t(w["W_out"])
    if c["post_mask"] is not None:
        dh = dh * c["post_mask"]
    dpost = dh * (c["post"] > 0)
    grads["W_post"] = _t(c["post_in"]) @ dpost
    grads["b_post"] = dpost.sum(axis=1)
    dh = dpost @ _t(w["W_post"])
    for name in ("gcn2", "gcn1"):
        dz = dh * (c[f"{name}_z"] > 0)
        adz = a_norm @ dz  # A~ is symmetric
        h_in = _t(c[f"{name}_in"])
        grads[f"W_{name}"] = h_in @ adz
        grads[f"b_{name}"] = dz.sum(axis=1)
        dh = adz @ _t(w[f"W_{name}"])
        if f"R_{name}" in w:
            grads[f"R_{name}"] = h_in @ dz
            dh = dh + dz @ _t(w[f"R_{name}"])
    if c["pre_mask"] is not None:
        dh = dh * c["pre_mask"]
    dpre = dh * (c["pre"] > 0)
    grads["W_pre"] = x.T @ dpre
    grads["b_pre"] = dpre.sum(axis=1)
    return total, {"ce": ce, "laplacian": pen}, grads


def _train_target(labels, train_mask, n_classes: int) -> np.ndarray:
    rows = np.flatnonzero(np.asarray(train_mask, dtype=bool))
    if rows.size == 0:
        raise ValueError("no training nodes")
    y = np.asarray(labels, dtype=np.int64)[rows]
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError(f"label out of range for {n_classes} classes")
    target = np.zeros((len(train_mask), n_classes))
    target[rows, y] = 1.0 / rows.size
    return target


def _stack(arrays: dict, b: int = 1) -> dict:
    return {k: np.repeat(v[None], b, axis=0) for k, v in arrays.items()}


def forward(g: Graph, params: LRGNNParams, train_mode: bool = False,
            rng: np.random.Generator | None = None, a_norm: np.ndarray | None = None) -> np.ndarray:
    """Class logits for every node (n x 32)."""
    if g.n_features != params.arrays["W_pre"].shape[0]:
        raise ShapeError(f"graph has {g.n_features} features, model expects "
                         f"{params.arrays['W_pre'].shape[0]}")
    if train_mode and rng is None and params.config.dropout > 0:
        raise ValueError("train_mode with dropout needs an rng")
    if a_norm is None:
        a_norm = normalize_adjacency(g)
    logits, _ = _forward(a_norm[None], g.features, _stack(params.arrays), params.config,
                         train_mode, rng)
    return logits[0]


def laplacian_penalty(y_pred, lap) -> float:
    """``mean((y - L y)^2)`` over all entries."""
    y_pred = np.asarray(y_pred, dtype=np.float64)
    lap = np.asarray(lap, dtype=np.float64)
    if lap.shape != (y_pred.shape[0], y_pred.shape[0]):
        raise ShapeError(f"Laplacian {lap.shape} vs predictions {y_pred.shape}")
    r = y_pred - lap @ y_pred
    return float(np.mean(r * r))


def penalty_operator(lap) -> np.ndarray:
    """``(I - L)^2``; with it the penalty is ``sum(Y * M2 Y) / size``."""
    m = np.eye(lap.shape[0]) - lap
    m2 = m @ m
    return 0.5 * (m2 + m2.T)


def loss_and_grads(a_norm, lap, x, labels, train_mask, params: LRGNNParams,
                   train_mode: bool = False, rng=None, m2: np.ndarray | None = None):
    """Cross-entropy on ``train_mask`` plus ``lambda * laplacian_penalty``, with gradients.

    ``labels`` only needs to be meaningful on ``train_mask`` rows. ``m2`` is
    :func:`penalty_operator` of ``lap``, computed here when not supplied.
    Returns ``(total, parts, grads)`` with ``grads`` aligned to ``params.names``.
    """
    if m2 is None and params.config.lambda_reg != 0.0:
        m2 = penalty_operator(lap)
    target = _train_target(labels, train_mask, params.config.n_classes)
    total, parts, grads = _batched_loss_and_grads(
        np.asarray(a_norm)[None], None if m2 is None else m2[None], np.asarray(x, dtype=np.float64),
        target, _stack(params.arrays), params.config, train_mode, rng)
    parts = {k: float(v[0]) for k, v in parts.items()}
    return float(total[0]), parts, [grads[k][0] for k in params.names]


@dataclass
class TrainResult:
    params: LRGNNParams
    losses: list = field(default_factory=list)


def _check_batch(graphs, n_features: int):
    if not graphs:
        raise ValueError("need at least one graph")
    first = graphs[0]
    for g in graphs:
        if g.n_features != n_features:
            raise ShapeError(f"graph has {g.n_features} features, model expects {n_features}")
        if g.n != first.n or not (g.features is first.features or np.array_equal(g.features, first.features)):
            raise ValueError("batched graphs must share features")
        if not (g.labels is first.labels or np.array_equal(g.labels, first.labels)):
            raise ValueError("batched graphs must share labels")


def train_lrgnn_batch(graphs, split, epochs: int | None = None, seed=0,
                      config: LRGNNConfig = LRGNNConfig(),
                      params: LRGNNParams | None = None) -> list[TrainResult]:
    """Train one model per graph from a shared initialization and seed.

    All graphs must share features and labels (variants of one parent). Result
    ``k`` matches ``train_lrgnn(graphs[k], split, epochs, seed, config)``.
    """
    epochs = config.epochs if epochs is None else epochs
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    rng = np.random.default_rng(seed)
    if params is None:
        params = LRGNNParams.init(rng, config)
    cfg = params.config
    _check_batch(graphs, params.arrays["W_pre"].shape[0])
    g0 = graphs[0]
    # only training labels are ever read
    rows = np.asarray(split.train, dtype=np.int64)
    mask = np.zeros(g0.n, dtype=bool)
    mask[rows] = True
    labels = np.zeros(g0.n, dtype=np.int64)
    labels[rows] = g0.labels[rows]
    target = _train_target(labels, mask, cfg.n_classes)

    a_norm = np.stack([normalize_adjacency(g) for g in graphs])
    m2 = (np.stack([penalty_operator(build_laplacian(g)[1]) for g in graphs])
          if cfg.lambda_reg != 0.0 else None)
    names = params.names
    w = _stack(params.arrays, len(graphs))
    arrays = [w[k] for k in names]
    state = OptimizerState(lr=cfg.lr)
    losses = []
    for epoch in range(epochs):
        total, parts, grads = _batched_loss_and_grads(a_norm, m2, g0.features, target,
                                                      dict(zip(names, arrays)), cfg, True, rng)
        if not np.all(np.isfinite(total)):
            bad = int(np.flatnonzero(~np.isfinite(total))[0])
            raise TrainingDivergence(
                f"LR-GNN loss became non-finite at epoch {epoch + 1}/{epochs} for graph {bad} "
                f"(ce={parts['ce'][bad]}, laplacian={parts['laplacian'][bad]})")
        losses.append(total)
        arrays = adaptive_moment_update(arrays, [grads[k] for k in names], state)
    out = []
    for b in range(len(graphs)):
        p = LRGNNParams({k: a[b].copy() for k, a in zip(names, arrays)}, cfg)
        if not p.all_finite():
            raise TrainingDivergence(f"LR-GNN parameters became non-finite after {epochs} epochs")
        out.append(TrainResult(p, [float(t[b]) for t in losses]))
    return out


def train_lrgnn(g: Graph, split, epochs: int | None = None, seed=0,
                config: LRGNNConfig = LRGNNConfig(), params: LRGNNParams | None = None) -> TrainResult:
    """Full-batch Adam on the training nodes of ``split``.

    Only ``g.labels[split.train]`` is ever read.
    """
    return train_lrgnn_batch([g], split, epochs, seed, config, params)[0]


# ---------------------------------------------------------------- metrics

@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float
    support: np.ndarray
    confusion: np.ndarray

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "auc": self.auc}


def confusion_matrix(y_true, y_pred, n_classes: int = N_CLASSES) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def ovr_auc(y_true, scores, n_classes: int = N_CLASSES) -> float:
    """Support-weighted one-vs-rest ROC AUC; ties count one half.

    Classes absent from ``y_true`` are skipped, as is a class that makes up
    every sample (no negatives). Returns nan if no class qualifies.
    """
    y_true = np.asarray(y_true)
    total, weight = 0.0, 0
    for c in range(n_classes):
        pos = y_true == c
        n_pos = int(pos.sum())
        n_neg = y_true.size - n_pos
        if n_pos == 0 or n_neg == 0:
            continue
        ranks = rankdata(scores[:, c])
        auc = (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
        total += n_pos * auc
        weight += n_pos
    return total / weight if weight else float("nan")


def classification_metrics(y_true, y_pred, scores=None, n_classes: int = N_CLASSES) -> MetricsReport:
    """Accuracy plus support-weighted precision/recall/F1 over classes present in ``y_true``."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise ValueError("cannot evaluate an empty index set")
    cm = confusion_matrix(y_true, y_pred, n_classes)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    present = support > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = np.where(predicted > 0, tp / predicted, 0.0)
        rec = np.where(support > 0, tp / support, 0.0)
        f1 = np.where(prec + rec > 0, 2 * prec * rec / (prec + rec), 0.0)
    wts = support[present] / support.sum()
    auc = ovr_auc(y_true, scores, n_classes) if scores is not None else float("nan")
    return MetricsReport(
        accuracy=float(tp.sum() / cm.sum()),
        precision=float(np.sum(wts * prec[present])),
        recall=float(np.sum(wts * rec[present])),
        f1=float(np.sum(wts * f1[present])),
        auc=float(auc),
        support=support,
        confusion=cm,
    )


def evaluate(g: Graph, params: LRGNNParams, index_set, a_norm: np.ndarray | None = None) -> MetricsReport:
    idx = np.asarray(index_set, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("cannot evaluate an empty index set")
    logits = forward(g, params, train_mode=False, a_norm=a_norm)
    probs = softmax(logits[idx])
    return classification_metrics(g.labels[idx], probs.argmax(axis=1), probs, params.config.n_classes)
