"""Graph-selection policies: epsilon-greedy, UCB-style multi-armed bandit and a
Lasso-based contextual bandit, plus context extraction and the Lasso solver."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .graph import Graph

EPSILON = 0.1
ALPHA = 1.0
LASSO_LAMBDA = 0.01
CONTEXT_NAMES = ("density", "weight_mean", "weight_sd", "degree_mean", "degree_sd",
                 "laplacian_trace", "latent_mean", "latent_sd")
CONTEXT_DIM = len(CONTEXT_NAMES)
# the Lasso is not trusted before it has seen twice as many rows as features
COLD_START = 2 * CONTEXT_DIM


def _argmax(values) -> int:
    # np.argmax returns the first maximum, which is the documented tie-break
    return int(np.argmax(np.asarray(values, dtype=np.float64)))


# ---------------------------------------------------------------- epsilon-greedy

def epsilon_greedy_select(accuracies, epsilon: float = EPSILON,
                          rng: np.random.Generator | None = None) -> int:
    """Argmax with probability ``1 - epsilon``, a uniform index otherwise."""
    acc = np.asarray(accuracies, dtype=np.float64).reshape(-1)
    if acc.size == 0:
        raise ValueError("no variants to choose from")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if epsilon > 0.0:
        if rng is None:
            raise ValueError("epsilon > 0 needs an rng")
        if rng.random() < epsilon:
            return int(rng.integers(acc.size))
    return _argmax(acc)


# ---------------------------------------------------------------- multi-armed bandit

@dataclass
class ArmStats:
    """Per-arm success and trial counters for the UCB-style reward."""

    successes: np.ndarray
    trials: np.ndarray
    total: int = 0
    alpha: float = ALPHA
    best_accuracy: float = 0.0

    @classmethod
    def new(cls, k: int, alpha: float = ALPHA) -> "ArmStats":
        if k < 1:
            raise ValueError("need at least one arm")
        return cls(np.zeros(k, dtype=np.int64), np.zeros(k, dtype=np.int64), 0, float(alpha))

    @property
    def k(self) -> int:
        return self.trials.shape[0]

    def copy(self) -> "ArmStats":
        return ArmStats(self.successes.copy(), self.trials.copy(), self.total, self.alpha,
                        self.best_accuracy)

    def check(self) -> None:
        if np.any(self.successes > self.trials) or np.any(self.successes < 0):
            raise AssertionError(f"success counts {self.successes} exceed trials {self.trials}")
        if int(self.trials.sum()) != self.total:
            raise AssertionError(f"trials sum {self.trials.sum()} != total {self.total}")


def mab_reward(stats: ArmStats, i: int) -> float:
    """``S_i / max(1, N_i) + alpha * sqrt(ln(N + 1) / max(1, N_i))``."""
    n_i = max(1, int(stats.trials[i]))
    return float(stats.successes[i] / n_i + stats.alpha * np.sqrt(np.log(stats.total + 1) / n_i))


def mab_select_update(stats: ArmStats, accuracies) -> tuple[int, ArmStats]:
    """Pick the arm with the highest reward, then update the counters.

    Only the chosen arm can score a success (its accuracy beats the best seen
    before this round), which keeps ``S_i <= N_i``. The best accuracy tracks
    every arm's observed accuracy.
    """
    acc = np.asarray(accuracies, dtype=np.float64).reshape(-1)
    if acc.shape[0] != stats.k:
        raise ValueError(f"{acc.shape[0]} accuracies for {stats.k} arms")
    chosen = _argmax([mab_reward(stats, i) for i in range(stats.k)])
    new = stats.copy()
    new.trials[chosen] += 1
    new.total += 1
    if acc[chosen] > stats.best_accuracy:
        new.successes[chosen] += 1
    new.best_accuracy = max(stats.best_accuracy, float(acc.max()))
    return chosen, new


# ---------------------------------------------------------------- context

def extract_context(g: Graph, latent_mu) -> np.ndarray:
    """Eight structural and latent statistics of one variant (``CONTEXT_NAMES``).

    Degrees count edges (unweighted); ``trace(L)/n`` uses weighted degrees.
    Spreads are population standard deviations.
    """
    mu = np.asarray(latent_mu, dtype=np.float64)
    n = g.n
    if mu.ndim != 2 or mu.shape[0] != n:
        raise ValueError(f"latent matrix {mu.shape} does not match {n} nodes")
    adj = g.adjacency
    iu = np.triu_indices(n, 1)
    upper = adj[iu]
    weights = upper[upper > 0]
    pairs = n * (n - 1) / 2
    degrees = np.count_nonzero(adj, axis=1).astype(np.float64)
    ctx = np.array([
        weights.size / pairs if pairs else 0.0,
        weights.mean() if weights.size else 0.0,
        weights.std() if weights.size else 0.0,
        degrees.mean() if n else 0.0,
        degrees.std() if n else 0.0,
        adj.sum() / n if n else 0.0,
        mu.mean() if mu.size else 0.0,
        mu.std() if mu.size else 0.0,
    ])
    if not np.all(np.isfinite(ctx)):
        raise ValueError(f"non-finite context {ctx}")
    return ctx


# ---------------------------------------------------------------- Lasso

@dataclass
class LassoModel:
    beta: np.ndarray
    intercept: float
    lambda_l1: float
    objective_path: list = field(default_factory=list)
    sweeps: int = 0

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return x @ self.beta + self.intercept


def lasso_objective(xs, y, beta, lam) -> float:
    r = y - xs @ beta
    return float(0.5 * np.mean(r * r) + lam * np.abs(beta).sum())


def _soft_threshold(rho: float, lam: float) -> float:
    if rho > lam:
        return rho - lam
    if rho < -lam:
        return rho + lam
    return 0.0


def lasso_fit(x, y, lambda_l1: float = LASSO_LAMBDA, tol: float = 1e-8,
              max_sweeps: int = 10_000) -> LassoModel:
    """Cyclic coordinate descent on ``(1/2N) sum (y - x b)^2 + lambda |b|_1``.

    Columns are z-scored (population sd) and ``y`` centred, so the intercept
    is unpenalized; coefficients are returned on the original scale. Constant
    columns keep a zero coefficient. ``objective_path`` holds the standardized
    objective before the first sweep and after each one.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"{x.shape[0]} rows but {y.shape[0]} targets")
    if x.shape[0] < 2:
        raise ValueError("need at least 2 observations")
    if lambda_l1 < 0:
        raise ValueError("lambda must be non-negative")
    n, p = x.shape
    x_mean, x_sd, active, xs = _standardize(x)
    y_mean = float(y.mean())
    yc = y - y_mean
    beta = np.zeros(p)
    if np.all(yc == 0):
        return LassoModel(beta, y_mean, lambda_l1, [0.0], 0)
    if lambda_l1 >= _max_corr(xs, yc):
        # beta = 0 satisfies the optimality conditions exactly
        return LassoModel(beta, y_mean, lambda_l1, [lasso_objective(xs, yc, beta, lambda_l1)], 0)

    resid = yc.copy()
    path = [lasso_objective(xs, yc, beta, lambda_l1)]
    sweeps = 0
    cols = np.flatnonzero(active)
    while sweeps < max_sweeps:
        sweeps += 1
        max_change = 0.0
        for j in cols:
            old = beta[j]
            # standardized columns have x_j . x_j / N = 1
            rho = float(xs[:, j] @ resid) / n + old
            new = _soft_threshold(rho, lambda_l1)
            if new != old:
                resid -= (new - old) * xs[:, j]
                beta[j] = new
                max_change = max(max_change, abs(new - old))
        path.append(lasso_objective(xs, yc, beta, lambda_l1))
        if max_change < tol:
            break
    raw = np.zeros(p)
    raw[active] = beta[active] / x_sd[active]
    return LassoModel(raw, float(y_mean - x_mean @ raw), lambda_l1, path, sweeps)


def lambda_max(x, y) -> float:
    """Smallest lambda for which every standardized coefficient is zero."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    return _max_corr(_standardize(x)[3], y - y.mean())


def _standardize(x: np.ndarray):
    x_mean = x.mean(axis=0)
    x_sd = x.std(axis=0)
    active = x_sd > 0
    xs = np.zeros_like(x)
    xs[:, active] = (x[:, active] - x_mean[active]) / x_sd[active]
    return x_mean, x_sd, active, xs


def _max_corr(xs: np.ndarray, yc: np.ndarray) -> float:
    return float(np.max(np.abs(xs.T @ yc)) / xs.shape[0])


# ---------------------------------------------------------------- contextual bandit

@dataclass
class CBState:
    """Context/reward history and the Lasso fitted to it."""

    contexts: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    lambda_l1: float = LASSO_LAMBDA
    model: LassoModel | None = None

    def __len__(self):
        return len(self.rewards)

    def copy(self) -> "CBState":
        return CBState(list(self.contexts), list(self.rewards), self.lambda_l1, self.model)


def cb_select_update(state: CBState, contexts: Sequence, observed_reward_fn: Callable[[int], float],
                     rng: np.random.Generator | None = None,
                     feedback: str = "chosen") -> tuple[int, CBState]:
    """Uniform choice during cold start, otherwise argmax of the Lasso prediction.

    ``feedback="chosen"`` appends only the chosen variant's (context, reward);
    ``feedback="all"`` appends every variant's pair, in index order.
    """
    ctx = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    if ctx.shape[0] == 0:
        raise ValueError("no contexts to choose from")
    if feedback not in ("chosen", "all"):
        raise ValueError(f"feedback must be 'chosen' or 'all', got {feedback!r}")
    if len(state) < COLD_START or state.model is None:
        if rng is None:
            raise ValueError("cold start needs an rng")
        chosen = int(rng.integers(ctx.shape[0]))
    else:
        chosen = _argmax(state.model.predict(ctx))
    new = state.copy()
    for k in (range(ctx.shape[0]) if feedback == "all" else (chosen,)):
        new.contexts.append(ctx[k].copy())
        new.rewards.append(float(observed_reward_fn(k)))
    if len(new) >= 2:
        new.model = lasso_fit(np.array(new.contexts), np.array(new.rewards), new.lambda_l1)
    return chosen, new


# ---------------------------------------------------------------- policy objects

METHODS = ("egreedy", "mab", "cb")


class Policy:
    """Common interface used by the experiment loop."""

    name = ""

    def select(self, accuracies, contexts, rng: np.random.Generator) -> int:
        raise NotImplementedError


class EpsilonGreedyPolicy(Policy):
    name = "egreedy"

    def __init__(self, epsilon: float = EPSILON):
        self.epsilon = epsilon

    def select(self, accuracies, contexts, rng):
        return epsilon_greedy_select(accuracies, self.epsilon, rng)


class MABPolicy(Policy):
    name = "mab"

    def __init__(self, k: int, alpha: float = ALPHA):
        self.stats = ArmStats.new(k, alpha)

    def select(self, accuracies, contexts, rng):
        chosen, self.stats = mab_select_update(self.stats, accuracies)
        return chosen


class ContextualPolicy(Policy):
    name = "cb"

    def __init__(self, lambda_l1: float = LASSO_LAMBDA, feedback: str = "chosen"):
        self.state = CBState(lambda_l1=lambda_l1)
        self.feedback = feedback

    def select(self, accuracies, contexts, rng):
        acc = np.asarray(accuracies, dtype=np.float64)
        chosen, self.state = cb_select_update(self.state, contexts, lambda i: acc[i], rng,
                                              self.feedback)
        return chosen


def make_policy(method: str, k: int, epsilon: float = EPSILON, alpha: float = ALPHA,
                lambda_l1: float = LASSO_LAMBDA, cb_feedback: str = "chosen") -> Policy:
    if method == "egreedy":
        return EpsilonGreedyPolicy(epsilon)
    if method == "mab":
        return MABPolicy(k, alpha)
    if method == "cb":
        return ContextualPolicy(lambda_l1, cb_feedback)
    raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
