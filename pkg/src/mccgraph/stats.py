"""Post-processing: per-iteration confidence bands, boxplot summaries, Mann-Whitney U."""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm, rankdata, t as student_t

FINAL_KEYS = ("f1", "recall", "precision", "auc")
EXACT_LIMIT = 12
# pairwise order of the p-value table
PAIRS = (("egreedy", "mab"), ("egreedy", "cb"), ("mab", "cb"))
METHOD_ORDER = ("egreedy", "mab", "cb")


def quantile(values, q: float) -> float:
    """Linear-interpolation quantile (the default numpy definition)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("quantile of an empty sample")
    return float(np.quantile(values, q))


def five_number(values) -> dict:
    return {"min": quantile(values, 0.0), "q1": quantile(values, 0.25),
            "median": quantile(values, 0.5), "q3": quantile(values, 0.75),
            "max": quantile(values, 1.0)}


def mean_ci(values, level: float = 0.95) -> tuple[float, float]:
    """Mean and Student-t half-width with ``len(values) - 1`` degrees of freedom."""
    values = np.asarray(values, dtype=np.float64)
    r = values.size
    if r < 2:
        raise ValueError("confidence interval needs at least 2 values")
    mean = float(values.mean())
    # a constant sample has exactly zero spread; std() can leave rounding residue
    sd = 0.0 if np.ptp(values) == 0 else float(values.std(ddof=1))
    half = float(student_t.ppf(0.5 + level / 2, r - 1) * sd / math.sqrt(r))
    return mean, half


@dataclass
class MethodSummary:
    method: str
    iterations: int
    repeats: int
    mean: list                 # per iteration, chosen-variant test accuracy
    ci_half: list
    boxplot: dict              # five-number summary of final test accuracy
    final: dict = field(default_factory=dict)

    def check(self) -> None:
        b = self.boxplot
        if not b["min"] <= b["q1"] <= b["median"] <= b["q3"] <= b["max"]:
            raise ValueError(f"{self.method}: boxplot summary out of order {b}")
        if any(h < 0 for h in self.ci_half):
            raise ValueError(f"{self.method}: negative CI half-width")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MethodSummary":
        return cls(**d)


def final_accuracies(records) -> np.ndarray:
    return np.array([r.final["accuracy"] for r in records], dtype=np.float64)


def summarize(records) -> MethodSummary:
    """Aggregate the RunRecords of one method over repeats."""
    records = list(records)
    if len(records) < 2:
        raise ValueError(f"summarize needs at least 2 repeats, got {len(records)}")
    m = len(records[0].rows)
    if any(len(r.rows) != m for r in records):
        raise ValueError("records have different iteration counts")
    curves = np.array([[row.chosen_test for row in r.rows] for r in records])
    means, halves = zip(*(mean_ci(curves[:, i]) for i in range(m)))
    acc = final_accuracies(records)
    final = {"mean": float(acc.mean()), "variance": float(acc.var(ddof=1)),
             "q1": quantile(acc, 0.25), "q3": quantile(acc, 0.75)}
    for key in FINAL_KEYS:
        final[key] = float(np.mean([r.final[key] for r in records]))
    s = MethodSummary(records[0].method, m, len(records), list(means), list(halves),
                      five_number(acc), final)
    s.check()
    return s


# ---------------------------------------------------------------- Mann-Whitney U

def _u_from_ranks(ranks: np.ndarray, n_a: int) -> float:
    return float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0)


def mann_whitney_u(sample_a, sample_b) -> tuple[float, float]:
    """Two-sided Mann-Whitney U test; returns (U of ``sample_a``, p).

    Midranks handle ties. With ``n_a + n_b <= 12`` the p-value is exact: every
    split of the pooled ranks into groups of sizes ``n_a`` and ``n_b`` is
    enumerated and counted when its U lies at least as far from ``n_a*n_b/2``
    as the observed U. Larger samples use the normal approximation with tie
    and continuity corrections.
    """
    a = np.asarray(sample_a, dtype=np.float64).ravel()
    b = np.asarray(sample_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("Mann-Whitney U needs two non-empty samples")
    n_a, n_b = a.size, b.size
    n = n_a + n_b
    ranks = rankdata(np.concatenate([a, b]))
    u = _u_from_ranks(ranks, n_a)
    mu = n_a * n_b / 2.0
    dev = abs(u - mu)
    if n <= EXACT_LIMIT:
        total = hits = 0
        tol = 1e-9
        for idx in itertools.combinations(range(n), n_a):
            u_k = float(ranks[list(idx)].sum() - n_a * (n_a + 1) / 2.0)
            hits += abs(u_k - mu) >= dev - tol
            total += 1
        return u, min(1.0, hits / total)
    _, counts = np.unique(ranks, return_counts=True)
    tie = float((counts ** 3 - counts).sum())
    var = n_a * n_b / 12.0 * ((n + 1) - tie / (n * (n - 1)))
    if var <= 0:
        return u, 1.0
    z = max(dev - 0.5, 0.0) / math.sqrt(var)
    return u, min(1.0, float(2.0 * norm.sf(z)))


@dataclass
class PValueRow:
    method_a: str
    method_b: str
    m: int
    u: float
    p: float


def pairwise_pvalues(finals: dict, m: int) -> list[PValueRow]:
    """Pairwise tests on per-repeat final accuracies, in the table's row order."""
    rows = []
    for a, b in PAIRS:
        if a in finals and b in finals:
            u, p = mann_whitney_u(finals[a], finals[b])
            rows.append(PValueRow(a, b, m, u, p))
    return rows


# ---------------------------------------------------------------- files

def export_results(summaries, pvalues, out_dir) -> Path:
    """Write summary.json, curves.csv, boxplot.csv and pvalues.csv into ``out_dir``."""
    summaries = list(summaries)
    if not summaries:
        raise ValueError("nothing to export")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tree = {"summaries": [s.to_dict() for s in summaries],
            "pvalues": [asdict(r) for r in pvalues]}
    (out / "summary.json").write_text(json.dumps(tree, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    with open(out / "curves.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "method", "m", "mean", "ci_lo", "ci_hi"])
        for s in summaries:
            for i, (mean, half) in enumerate(zip(s.mean, s.ci_half), start=1):
                w.writerow([i, s.method, s.iterations, repr(mean), repr(mean - half),
                            repr(mean + half)])
    with open(out / "boxplot.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "m", "min", "q1", "median", "q3", "max"])
        for s in summaries:
            b = s.boxplot
            w.writerow([s.method, s.iterations] + [repr(b[k]) for k in
                                                   ("min", "q1", "median", "q3", "max")])
    with open(out / "pvalues.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method_a", "method_b", "m", "U", "p"])
        for r in pvalues:
            w.writerow([r.method_a, r.method_b, r.m, repr(r.u), repr(r.p)])
    return out


def read_results(out_dir) -> tuple[list[MethodSummary], list[PValueRow]]:
    tree = json.loads((Path(out_dir) / "summary.json").read_text(encoding="utf-8"))
    return ([MethodSummary.from_dict(d) for d in tree["summaries"]],
            [PValueRow(**d) for d in tree["pvalues"]])


def read_csv_table(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def summarize_runs(runs: dict) -> tuple[list[MethodSummary], list[PValueRow]]:
    """``runs`` maps (method, m) to RunRecord lists; returns summaries and p-value rows."""
    def order(key):
        method, m = key
        return (m, METHOD_ORDER.index(method) if method in METHOD_ORDER else len(METHOD_ORDER),
                method)

    summaries = [summarize(runs[key]) for key in sorted(runs, key=order)]
    pvalues = []
    for m in sorted({m for _, m in runs}):
        finals = {meth: final_accuracies(recs) for (meth, mm), recs in runs.items() if mm == m}
        pvalues.extend(pairwise_pvalues(finals, m))
    return summaries, pvalues
