"""The optimization loop: GVAE -> prune -> variants -> LR-GNN scoring -> policy -> repeat."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import bandit
from .cohort import FEATURE_NAMES, Split, generate_cohort, standardize_features, stratified_split
from .graph import Graph, complete_graph
from .gvae import GVAEConfig, encode, prune_edges, rescale_similarity, train_gvae
from .lrgnn import LRGNNConfig, classification_metrics, forward, train_lrgnn_batch
from .numeric import softmax
from .variants import generate_variants

log = logging.getLogger(__name__)

STAGE_GVAE, STAGE_VARIANTS, STAGE_GNN, STAGE_POLICY = range(4)
METRIC_KEYS = ("accuracy", "precision", "recall", "f1", "auc")


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and iteration."""

    def __init__(self, stage: str, iteration: int, repeat: int, cause: Exception):
        super().__init__(f"stage {stage!r} failed at iteration {iteration} (repeat {repeat}): "
                         f"{type(cause).__name__}: {cause}")
        self.stage = stage
        self.iteration = iteration
        self.repeat = repeat


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit seed from a root seed and a path of integer keys."""
    ss = np.random.SeedSequence(int(keys[0]), spawn_key=tuple(int(k) for k in keys[1:]))
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------- configuration

@dataclass
class ExperimentConfig:
    n_patients: int = 400
    k_variants: int = 5
    sigma: float = 0.1
    iterations: int = 15
    repeats: int = 6
    method: str = "cb"
    master_seed: int = 0
    gvae_epochs: int = 150
    gnn_epochs: int = 200
    split: tuple = (0.6, 0.2, 0.2)
    tau0: float = 0.5
    tau_step: float = 0.02
    tau_min: float = 0.3
    tau_max: float = 0.7
    epsilon: float = bandit.EPSILON
    alpha: float = bandit.ALPHA
    lasso_lambda: float = bandit.LASSO_LAMBDA
    cb_feedback: str = "all"
    gvae_hidden1: int = 32
    gvae_hidden2: int = 16
    latent_dim: int = 16
    gvae_lr: float = 0.01
    beta_kl: float = 1.0
    feature_weight: float = 0.1
    gnn_hidden: int = 32
    gnn_gcn1: int = 32
    gnn_gcn2: int = 16
    dropout: float = 0.2
    lambda_reg: float = 0.01
    gnn_lr: float = 0.01
    root_weight: bool = True
    early_stop: bool = False
    patience: int = 5

    def __post_init__(self):
        self.split = tuple(float(f) for f in self.split)
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        for name in ("n_patients", "k_variants", "iterations", "repeats", "master_seed",
                     "gvae_epochs", "gnn_epochs", "gvae_hidden1", "gvae_hidden2", "latent_dim",
                     "gnn_hidden", "gnn_gcn1", "gnn_gcn2", "patience"):
            v = getattr(self, name)
            need(isinstance(v, (int, np.integer)) and not isinstance(v, bool),
                 f"{name} must be an integer, got {v!r}")
        need(self.n_patients >= 64, "n_patients must be >= 64")
        need(self.k_variants >= 1, "k_variants must be >= 1")
        need(self.iterations >= 1, "iterations must be >= 1")
        need(self.repeats >= 1, "repeats must be >= 1")
        need(self.master_seed >= 0, "master_seed must be >= 0")
        need(self.gvae_epochs >= 1 and self.gnn_epochs >= 1, "epoch counts must be >= 1")
        need(self.sigma >= 0, "sigma must be >= 0")
        need(self.method in bandit.METHODS, f"method must be one of {bandit.METHODS}")
        need(self.cb_feedback in ("chosen", "all"), "cb_feedback must be 'chosen' or 'all'")
        need(len(self.split) == 3 and all(f > 0 for f in self.split)
             and abs(sum(self.split) - 1.0) < 1e-9, "split must be three positive fractions summing to 1")
        need(0 <= self.tau_min <= self.tau0 <= self.tau_max <= 1, "need 0 <= tau_min <= tau0 <= tau_max <= 1")
        need(self.tau_step >= 0, "tau_step must be >= 0")
        need(0 <= self.epsilon <= 1, "epsilon must lie in [0, 1]")
        need(self.alpha >= 0 and self.lasso_lambda >= 0 and self.lambda_reg >= 0,
             "alpha, lasso_lambda and lambda_reg must be >= 0")
        need(0 <= self.dropout < 1, "dropout must lie in [0, 1)")
        need(self.gvae_lr > 0 and self.gnn_lr > 0, "learning rates must be positive")
        need(self.patience >= 1, "patience must be >= 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {p}: {exc.strerror or exc}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON: {exc}") from None
        return cls.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def gvae_config(self) -> GVAEConfig:
        return GVAEConfig(hidden1=self.gvae_hidden1, hidden2=self.gvae_hidden2,
                          latent_dim=self.latent_dim, lr=self.gvae_lr, beta_kl=self.beta_kl,
                          feature_weight=self.feature_weight, root_weight=self.root_weight,
                          epochs=self.gvae_epochs)

    def gnn_config(self) -> LRGNNConfig:
        return LRGNNConfig(n_features=len(FEATURE_NAMES), hidden=self.gnn_hidden,
                           gcn1=self.gnn_gcn1, gcn2=self.gnn_gcn2, dropout=self.dropout,
                           lambda_reg=self.lambda_reg, root_weight=self.root_weight,
                           lr=self.gnn_lr, epochs=self.gnn_epochs)


# ---------------------------------------------------------------- records

@dataclass
class IterationRow:
    iteration: int
    tau: float
    n_edges: int
    accuracies: list          # validation accuracy per variant (the reward)
    test_accuracies: list
    chosen: int
    chosen_metrics: dict      # test metrics of the chosen variant
    best_so_far: float
    input_digest: str
    chosen_digest: str
    stopped: bool = False

    @property
    def chosen_val(self) -> float:
        return self.accuracies[self.chosen]

    @property
    def chosen_test(self) -> float:
        return self.chosen_metrics["accuracy"]


@dataclass
class RunRecord:
    method: str
    repeat: int
    seed: int
    rows: list = field(default_factory=list)
    # wall-clock seconds per stage; kept out of result files so they stay reproducible
    timings: dict = field(default_factory=dict)

    @property
    def final(self) -> dict:
        return self.rows[-1].chosen_metrics

    def best_series(self) -> list:
        return [r.best_so_far for r in self.rows]

    def truncated(self, m: int) -> "RunRecord":
        if not 1 <= m <= len(self.rows):
            raise ValueError(f"cannot truncate {len(self.rows)} rows to {m}")
        return RunRecord(self.method, self.repeat, self.seed, self.rows[:m], dict(self.timings))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list


# ---------------------------------------------------------------- loop

@dataclass
class Problem:
    """Everything shared by all repeats and methods: features, labels, split."""

    features: np.ndarray
    labels: np.ndarray
    split: Split

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> "Problem":
        cohort = generate_cohort(config.n_patients, config.master_seed)
        feats = standardize_features(cohort.factors)
        split = stratified_split(cohort.labels, config.split, config.master_seed)
        return cls(feats, cohort.labels, split)

    def initial_graph(self) -> Graph:
        return complete_graph(self.features, self.labels)


@dataclass
class LoopState:
    graph: Graph
    policy: bandit.Policy
    rng: np.random.Generator
    tau: float
    best_so_far: float = 0.0
    flat_steps: int = 0
    stopped: bool = False


@dataclass
class _Scored:
    """Policy-independent outcome of one iteration, shareable across methods."""

    pruned: Graph
    variants: list
    val_acc: list
    test_metrics: list
    contexts: np.ndarray
    timings: dict


def _metrics(labels, logits, idx) -> dict:
    probs = softmax(logits[idx])
    rep = classification_metrics(labels[idx], probs.argmax(axis=1), probs, logits.shape[1])
    return rep.as_dict()


def _score_iteration(problem: Problem, graph: Graph, tau: float, config: ExperimentConfig,
                     repeat_seed: int, t: int, repeat: int) -> _Scored:
    timings = {}
    stage = "gvae"
    try:
        t0 = time.perf_counter()
        gv = train_gvae(graph, config.gvae_epochs, derive_seed(repeat_seed, t, STAGE_GVAE),
                        config.gvae_config())
        # pruning only removes edges: pairs absent from the input stay absent
        similarity = rescale_similarity(gv.a_hat) * (graph.adjacency > 0)
        pruned = graph.with_adjacency(prune_edges(similarity, tau))
        timings["gvae"] = time.perf_counter() - t0

        stage = "variants"
        t0 = time.perf_counter()
        batch = generate_variants(pruned, config.k_variants, config.sigma,
                                  derive_seed(repeat_seed, t, STAGE_VARIANTS))
        timings["variants"] = time.perf_counter() - t0

        stage = "gnn"
        t0 = time.perf_counter()
        # one seed per iteration: every variant starts from the same weights and
        # dropout stream, so accuracy differences come from the graphs alone
        trained = train_lrgnn_batch(batch.variants, problem.split, config.gnn_epochs,
                                    derive_seed(repeat_seed, t, STAGE_GNN), config.gnn_config())
        val_acc, test_metrics, contexts = [], [], []
        for v, res in zip(batch.variants, trained):
            logits = forward(v, res.params)
            val_acc.append(_metrics(problem.labels, logits, problem.split.val)["accuracy"])
            test_metrics.append(_metrics(problem.labels, logits, problem.split.test))
            mu, _ = encode(v, gv.params)
            contexts.append(bandit.extract_context(v, mu))
        timings["gnn"] = time.perf_counter() - t0
    except Exception as exc:
        raise StageError(stage, t, repeat, exc) from exc
    return _Scored(pruned, batch.variants, val_acc, test_metrics, np.array(contexts), timings)


def _canonical(variants: list, k: int) -> int:
    """Lowest index whose adjacency is bitwise identical to variant ``k``."""
    target = variants[k].adjacency
    for j in range(k):
        if np.array_equal(variants[j].adjacency, target):
            return j
    return k


def run_iteration(problem: Problem, state: LoopState, t: int, config: ExperimentConfig,
                  repeat_seed: int, repeat: int = 0, cache: dict | None = None,
                  observer: Callable | None = None) -> tuple[Graph, IterationRow, dict]:
    """One pass of the loop. Returns ``(next graph, row, stage timings)``; ``state`` advances."""
    graph = state.graph
    key = (t, graph.digest(), state.tau)
    scored = cache.get(key) if cache is not None else None
    if scored is None:
        scored = _score_iteration(problem, graph, state.tau, config, repeat_seed, t, repeat)
        if cache is not None:
            # variants are cheap to regenerate from their seed; keep the cache small
            cache[key] = dataclasses.replace(scored, variants=None)
    elif scored.variants is None:
        batch = generate_variants(scored.pruned, config.k_variants, config.sigma,
                                  derive_seed(repeat_seed, t, STAGE_VARIANTS))
        scored = dataclasses.replace(scored, variants=batch.variants)
    timings = dict(scored.timings)
    if observer is not None:
        observer("pruned", {"iteration": t, "parent": graph, "graph": scored.pruned})
        for v in scored.variants:
            observer("variant", {"iteration": t, "parent": scored.pruned, "graph": v})

    t0 = time.perf_counter()
    try:
        raw = state.policy.select(scored.val_acc, scored.contexts, state.rng)
    except Exception as exc:
        raise StageError("policy", t, repeat, exc) from exc
    chosen = _canonical(scored.variants, raw)
    timings["policy"] = time.perf_counter() - t0

    iter_best = max(scored.val_acc)
    improved = iter_best > state.best_so_far
    state.best_so_far = max(state.best_so_far, iter_best)
    tau_used = state.tau
    step = config.tau_step if improved else -config.tau_step
    state.tau = float(np.clip(state.tau + step, config.tau_min, config.tau_max))
    state.flat_steps = 0 if improved else state.flat_steps + 1
    if config.early_stop and state.flat_steps >= config.patience:
        state.stopped = True

    nxt = scored.variants[chosen]
    row = IterationRow(
        iteration=t + 1, tau=tau_used, n_edges=scored.pruned.n_edges(),
        accuracies=list(scored.val_acc), test_accuracies=[m["accuracy"] for m in scored.test_metrics],
        chosen=chosen, chosen_metrics=dict(scored.test_metrics[chosen]),
        best_so_far=state.best_so_far, input_digest=graph.digest(), chosen_digest=nxt.digest())
    state.graph = nxt
    if observer is not None:
        observer("chosen", {"iteration": t, "graph": nxt, "row": row, "policy": state.policy})
    return nxt, row, timings


def run_repeat(problem: Problem, config: ExperimentConfig, repeat: int, method: str | None = None,
               cache: dict | None = None, observer: Callable | None = None) -> RunRecord:
    method = config.method if method is None else method
    seed = config.master_seed + repeat
    policy = bandit.make_policy(method, config.k_variants, config.epsilon, config.alpha,
                                config.lasso_lambda, config.cb_feedback)
    state = LoopState(problem.initial_graph(), policy,
                      np.random.default_rng(derive_seed(seed, STAGE_POLICY)), config.tau0)
    if observer is not None:
        observer("initial", {"graph": state.graph, "policy": policy})
    record = RunRecord(method, repeat, seed)
    for t in range(config.iterations):
        if state.stopped:
            # budget is fixed; after an early stop the last state is carried forward
            last = record.rows[-1]
            record.rows.append(dataclasses.replace(last, iteration=t + 1, stopped=True))
            continue
        _, row, timings = run_iteration(problem, state, t, config, seed, repeat, cache, observer)
        record.rows.append(row)
        for k, v in timings.items():
            record.timings[k] = record.timings.get(k, 0.0) + v
        log.info("%s repeat %d iteration %d: tau=%.2f edges=%d chosen=%d val=%.4f test=%.4f",
                 method, repeat, t + 1, row.tau, row.n_edges, row.chosen, row.chosen_val,
                 row.chosen_test)
    return record


def _repeat_task(args):
    problem, config, repeat, methods = args
    cache: dict = {}
    return [run_repeat(problem, config, repeat, m, cache) for m in methods]


def run_comparison(config: ExperimentConfig, methods=bandit.METHODS, jobs: int = 1,
                   observer: Callable | None = None,
                   problem: Problem | None = None) -> dict[str, ExperimentResult]:
    """Run every method on the same cohort, split and seeds.

    Repeats are independent; with ``jobs > 1`` they run in worker processes and
    results are gathered in repeat order. Work that is identical across methods
    (same input graph at the same iteration) is computed once per repeat.
    """
    methods = list(methods)
    for m in methods:
        if m not in bandit.METHODS:
            raise ConfigError(f"unknown method {m!r}; expected one of {', '.join(bandit.METHODS)}")
    if problem is None:
        problem = Problem.from_config(config)
    tasks = [(problem, config, r, methods) for r in range(config.repeats)]
    if jobs > 1 and observer is None:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_repeat = list(pool.map(_repeat_task, tasks))
    else:
        per_repeat = []
        for problem_, cfg, r, ms in tasks:
            cache: dict = {}
            per_repeat.append([run_repeat(problem_, cfg, r, m, cache, observer) for m in ms])
    return {m: ExperimentResult(config.replace(method=m), [recs[i] for recs in per_repeat])
            for i, m in enumerate(methods)}


def run_experiment(config: ExperimentConfig, jobs: int = 1, observer: Callable | None = None,
                   problem: Problem | None = None) -> ExperimentResult:
    """``config.repeats`` seeded repeats of ``config.method``."""
    return run_comparison(config, [config.method], jobs, observer, problem)[config.method]


# ---------------------------------------------------------------- result files

def _records_header(k: int) -> list[str]:
    return (["repeat", "seed", "iteration", "tau", "n_edges", "chosen", "best_so_far", "stopped"]
            + [f"chosen_{m}" for m in METRIC_KEYS]
            + ["input_digest", "chosen_digest"]
            + [f"val_acc_{i}" for i in range(k)] + [f"test_acc_{i}" for i in range(k)])


def write_records(records: list, path) -> None:
    k = len(records[0].rows[0].accuracies)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_records_header(k))
        for rec in records:
            for row in rec.rows:
                w.writerow([rec.repeat, rec.seed, row.iteration, repr(row.tau), row.n_edges,
                            row.chosen, repr(row.best_so_far), int(row.stopped)]
                           + [repr(float(row.chosen_metrics[m])) for m in METRIC_KEYS]
                           + [row.input_digest, row.chosen_digest]
                           + [repr(float(a)) for a in row.accuracies]
                           + [repr(float(a)) for a in row.test_accuracies])


def read_records(path, method: str) -> list[RunRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["repeat", "seed", "iteration"]:
            raise ValueError(f"{path}: not a records file")
        k = sum(1 for h in header if h.startswith("val_acc_"))
        if header != _records_header(k):
            raise ValueError(f"{path}: unexpected header")
        records: dict[int, RunRecord] = {}
        for line, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            rep, seed = int(row[0]), int(row[1])
            rec = records.setdefault(rep, RunRecord(method, rep, seed))
            metrics = {m: float(v) for m, v in zip(METRIC_KEYS, row[8:13])}
            rec.rows.append(IterationRow(
                iteration=int(row[2]), tau=float(row[3]), n_edges=int(row[4]), chosen=int(row[5]),
                best_so_far=float(row[6]), stopped=bool(int(row[7])), chosen_metrics=metrics,
                input_digest=row[13], chosen_digest=row[14],
                accuracies=[float(v) for v in row[15:15 + k]],
                test_accuracies=[float(v) for v in row[15 + k:15 + 2 * k]]))
    return [records[r] for r in sorted(records)]


def run_dir_name(method: str, m: int) -> str:
    return f"run_{method}_{m}"


def write_run(result: ExperimentResult, out_dir, m: int | None = None) -> Path:
    """Write ``run_<method>_<m>/records.csv`` and ``summary.json`` under ``out_dir``."""
    from .stats import summarize

    m = result.config.iterations if m is None else m
    records = [r.truncated(m) for r in result.records]
    method = result.config.method
    d = Path(out_dir) / run_dir_name(method, m)
    d.mkdir(parents=True, exist_ok=True)
    write_records(records, d / "records.csv")
    summary = {
        "method": method,
        "iterations": m,
        "config": result.config.replace(iterations=m).to_dict(),
        "repeats": [{"repeat": r.repeat, "seed": r.seed, "final": r.final} for r in records],
    }
    if len(records) >= 2:
        summary["summary"] = summarize(records).to_dict()
    (d / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                    encoding="utf-8")
    return d
