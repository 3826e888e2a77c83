"""Dense float64 building blocks shared by the learning modules.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Gradients are
derived by hand for every architecture, and :func:`finite_diff_grad` is the
oracle used to check them.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Raised when operand shapes do not line up."""


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    return expit(x)


def softplus(x):
    return np.logaddexp(0.0, x)


def identity(x):
    return x


ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "relu": relu,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "identity": identity,
}


def activation_grad(name: str, pre: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Derivative of activation ``name`` evaluated at pre-activation ``pre``.

    ``out`` is the already computed activation output, reused where cheaper.
    """
    if name == "relu":
        return (pre > 0).astype(np.float64)
    if name == "sigmoid":
        return out * (1.0 - out)
    if name == "softplus":
        return expit(pre)
    if name == "identity":
        return np.ones_like(pre)
    raise ValueError(f"unknown activation {name!r}")


def dense_forward(x, weights, bias, activation: str = "identity") -> np.ndarray:
    """Affine map followed by an elementwise activation: ``act(x @ W + b)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    bias = np.asarray(bias, dtype=np.float64).reshape(-1)
    if x.shape[1] != weights.shape[0]:
        raise ShapeError(f"input shape {x.shape} does not match weights shape {weights.shape}")
    if bias.shape[0] != weights.shape[1]:
        raise ShapeError(f"bias shape {bias.shape} does not match weights shape {weights.shape}")
    try:
        act = ACTIVATIONS[activation]
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}") from None
    return act(x @ weights + bias)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits, labels, mask) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over masked rows and its gradient w.r.t. ``logits``.

    Rows outside ``mask`` contribute nothing and get a zero gradient.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    n, c = logits.shape
    if labels.shape[0] != n or mask.shape[0] != n:
        raise ShapeError(f"logits shape {logits.shape} vs labels {labels.shape} / mask {mask.shape}")
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise ValueError("no training nodes")
    y = labels[rows]
    if y.min() < 0 or y.max() >= c:
        raise ValueError(f"label out of range for {c} classes")
    logp = log_softmax(logits[rows])
    loss = -float(logp[np.arange(rows.size), y].mean())
    grad = np.zeros_like(logits)
    g = np.exp(logp)
    g[np.arange(rows.size), y] -= 1.0
    grad[rows] = g / rows.size
    return loss, grad


@dataclass
class OptimizerState:
    """Adam moments and hyperparameters for one parameter list."""

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    # first and second moments of all parameters, flattened in list order
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def copy(self) -> "OptimizerState":
        return copy.deepcopy(self)


def adaptive_moment_update(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
                           state: OptimizerState) -> list[np.ndarray]:
    """One bias-corrected Adam step. Returns new arrays; ``state`` is advanced in place."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"param {p.shape}, grad {g.shape}")
    sizes = [p.size for p in params]
    total = sum(sizes)
    if state.m is None:
        state.m = np.zeros(total)
        state.v = np.zeros(total)
    if state.m.size != total:
        raise ShapeError(f"optimizer holds {state.m.size} moment entries, got {total}")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    # one elementwise pass over the concatenated parameters
    g = np.concatenate([np.ravel(x) for x in grads]).astype(np.float64, copy=False)
    p = np.concatenate([np.ravel(x) for x in params]).astype(np.float64, copy=False)
    state.m = b1 * state.m + (1.0 - b1) * g
    state.v = b2 * state.v + (1.0 - b2) * (g * g)
    flat = p - state.lr * (state.m / corr1) / (np.sqrt(state.v / corr2) + state.eps)
    out = np.split(flat, np.cumsum(sizes)[:-1])
    return [o.reshape(x.shape) for o, x in zip(out, params)]


def finite_diff_grad(loss_fn: Callable[[list[np.ndarray]], float], params: Sequence[np.ndarray],
                     h: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of a scalar ``loss_fn(params)``.

    ``params`` are copied; the callable always receives a full list with a
    single entry nudged by ``±h``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    work = [np.array(p, dtype=np.float64, copy=True) for p in params]
    grads = []
    for k, p in enumerate(work):
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = float(loss_fn(work))
            flat[idx] = orig - h
            f_minus = float(loss_fn(work))
            flat[idx] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError(f"non-finite loss while differentiating param {k}[{idx}]")
            gflat[idx] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def rel_error(a, b, floor: float = 1e-6) -> float:
    """Max relative error between two arrays, with an absolute floor on the scale."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale)) if a.size else 0.0
