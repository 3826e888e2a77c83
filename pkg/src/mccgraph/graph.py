"""Weighted undirected graphs, Laplacians, normalization and CSV I/O."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

N_CLASSES = 32
SYMMETRY_TOL = 1e-12


class GraphError(ValueError):
    """A graph violates symmetry, zero-diagonal or weight-range invariants."""


class GraphFormatError(ValueError):
    """A graph CSV file could not be parsed."""

    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


def check_adjacency(adj: np.ndarray) -> None:
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise GraphError(f"adjacency must be square, got shape {adj.shape}")
    if not np.all(np.isfinite(adj)):
        raise GraphError("adjacency has non-finite entries")
    if np.max(np.abs(adj - adj.T), initial=0.0) > SYMMETRY_TOL:
        raise GraphError("adjacency is not symmetric")
    if np.any(np.diag(adj) != 0):
        raise GraphError("adjacency has self-loops")
    if adj.size and (adj.min() < 0 or adj.max() > 1):
        raise GraphError("adjacency weights must lie in [0, 1]")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=a.dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable patient graph.

    ``features`` may be shared between graphs (variants reuse the parent's
    array); it is read-only so sharing is safe.
    """

    adjacency: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=np.float64)
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        check_adjacency(adj)
        n = adj.shape[0]
        if feats.ndim != 2 or feats.shape[0] != n:
            raise GraphError(f"features shape {feats.shape} does not match {n} nodes")
        if labels.shape[0] != n:
            raise GraphError(f"{labels.shape[0]} labels for {n} nodes")
        if n and (labels.min() < 0 or labels.max() >= N_CLASSES):
            raise GraphError(f"labels must lie in 0..{N_CLASSES - 1}")
        if not np.all(np.isfinite(feats)):
            raise GraphError("features have non-finite entries")
        object.__setattr__(self, "adjacency", adj if not adj.flags.writeable else _frozen(adj))
        object.__setattr__(self, "features", feats if not feats.flags.writeable else _frozen(feats))
        object.__setattr__(self, "labels", labels if not labels.flags.writeable else _frozen(labels))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def with_adjacency(self, adjacency: np.ndarray) -> "Graph":
        """New graph with the same (shared) features and labels."""
        return Graph(adjacency, self.features, self.labels)

    def n_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.adjacency, 1)))

    def digest(self) -> str:
        return adjacency_digest(self.adjacency)

    def equals(self, other: "Graph", tol: float = 0.0) -> bool:
        if self.adjacency.shape != other.adjacency.shape or self.features.shape != other.features.shape:
            return False
        return (np.max(np.abs(self.adjacency - other.adjacency), initial=0.0) <= tol
                and np.max(np.abs(self.features - other.features), initial=0.0) <= tol
                and np.array_equal(self.labels, other.labels))


def adjacency_digest(adj: np.ndarray) -> str:
    a = np.ascontiguousarray(adj, dtype=np.float64)
    return hashlib.sha256(a.tobytes() + str(a.shape).encode()).hexdigest()


def _adj(g) -> np.ndarray:
    return g.adjacency if isinstance(g, Graph) else np.asarray(g, dtype=np.float64)


def build_laplacian(g) -> tuple[np.ndarray, np.ndarray]:
    """Degree matrix ``D`` and combinatorial Laplacian ``L = D - A``."""
    adj = _adj(g)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise GraphError(f"adjacency must be square, got shape {adj.shape}")
    if np.max(np.abs(adj - adj.T), initial=0.0) > SYMMETRY_TOL:
        raise GraphError("cannot build Laplacian of an asymmetric adjacency")
    deg = np.diag(adj.sum(axis=1))
    return deg, deg - adj


def normalize_adjacency(g) -> np.ndarray:
    """Symmetric renormalization with self-loops, ``D~^-1/2 (A+I) D~^-1/2``."""
    adj = _adj(g)
    a_tilde = adj + np.eye(adj.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    out = a_tilde * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
    # remove rounding asymmetry so downstream symmetry checks are exact
    return 0.5 * (out + out.T)


def sanitize(raw) -> np.ndarray:
    """Symmetrize by averaging, clip to [0, 1] and drop self-loops."""
    m = np.asarray(raw, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise GraphError(f"sanitize needs a square matrix, got shape {m.shape}")
    out = np.clip(0.5 * (m + m.T), 0.0, 1.0)
    np.fill_diagonal(out, 0.0)
    return out


def complete_graph(features, labels) -> Graph:
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n < 2:
        raise GraphError("a complete graph needs at least 2 nodes")
    adj = np.ones((n, n)) - np.eye(n)
    return Graph(adj, features, labels)


# ---------------------------------------------------------------- CSV I/O

def write_graph(g: Graph, path, feature_names: Sequence[str] | None = None) -> Path:
    """Write ``nodes.csv`` and ``edges.csv`` into directory ``path``.

    Floats are written with ``repr`` so a read-back is bit-exact.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    f = g.n_features
    names = list(feature_names) if feature_names is not None else [f"f{k}" for k in range(f)]
    if len(names) != f:
        raise ValueError(f"{len(names)} feature names for {f} feature columns")
    with open(out / "nodes.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *names, "label"])
        for i in range(g.n):
            w.writerow([i, *(repr(float(v)) for v in g.features[i]), int(g.labels[i])])
    iu, ju = np.nonzero(np.triu(g.adjacency, 1))
    with open(out / "edges.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "weight"])
        for i, j in zip(iu, ju):
            w.writerow([int(i), int(j), repr(float(g.adjacency[i, j]))])
    return out


def _parse_float(text, path, line) -> float:
    try:
        v = float(text)
    except ValueError:
        raise GraphFormatError(path, line, f"not a number: {text!r}") from None
    if not np.isfinite(v):
        raise GraphFormatError(path, line, f"non-finite value {text!r}")
    return v


def _parse_int(text, path, line) -> int:
    try:
        return int(text)
    except ValueError:
        raise GraphFormatError(path, line, f"not an integer: {text!r}") from None


def read_graph(path) -> tuple[Graph, list[str]]:
    """Read a graph written by :func:`write_graph`. Returns ``(graph, feature_names)``."""
    src = Path(path)
    nodes_path, edges_path = src / "nodes.csv", src / "edges.csv"
    with open(nodes_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise GraphFormatError(nodes_path, 1, "missing header")
    header = rows[0]
    if len(header) < 2 or header[0] != "id" or header[-1] != "label":
        raise GraphFormatError(nodes_path, 1, "header must be id,<features...>,label")
    names = header[1:-1]
    n = len(rows) - 1
    feats = np.zeros((n, len(names)))
    labels = np.zeros(n, dtype=np.int64)
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise GraphFormatError(nodes_path, line, f"expected {len(header)} fields, got {len(row)}")
        node = _parse_int(row[0], nodes_path, line)
        if node != line - 2:
            raise GraphFormatError(nodes_path, line, f"node ids must be 0..n-1 in order, got {node}")
        feats[node] = [_parse_float(v, nodes_path, line) for v in row[1:-1]]
        lab = _parse_int(row[-1], nodes_path, line)
        if not 0 <= lab < N_CLASSES:
            raise GraphFormatError(nodes_path, line, f"label {lab} out of range 0..{N_CLASSES - 1}")
        labels[node] = lab

    adj = np.zeros((n, n))
    seen = set()
    with open(edges_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head != ["i", "j", "weight"]:
            raise GraphFormatError(edges_path, 1, "header must be i,j,weight")
        for line, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise GraphFormatError(edges_path, line, f"expected 3 fields, got {len(row)}")
            i = _parse_int(row[0], edges_path, line)
            j = _parse_int(row[1], edges_path, line)
            w = _parse_float(row[2], edges_path, line)
            if not (0 <= i < j < n):
                raise GraphFormatError(edges_path, line, f"edge ({i},{j}) must satisfy 0 <= i < j < {n}")
            if (i, j) in seen:
                raise GraphFormatError(edges_path, line, f"duplicate edge ({i},{j})")
            if not 0 <= w <= 1:
                raise GraphFormatError(edges_path, line, f"weight {w} outside [0, 1]")
            seen.add((i, j))
            adj[i, j] = adj[j, i] = w
    return Graph(adj, feats, labels), names


def graph_io(path, mode: str, g: Graph | None = None):
    """Dispatch to :func:`read_graph` / :func:`write_graph` by ``mode``."""
    if mode == "write":
        if g is None:
            raise ValueError("write mode needs a graph")
        write_graph(g, path)
        return None
    if mode == "read":
        return read_graph(path)[0]
    raise ValueError(f"mode must be 'read' or 'write', got {mode!r}")
