"""Stochastic structural variants of a graph: Gaussian noise on existing edges only."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, adjacency_digest, sanitize


@dataclass(frozen=True)
class VariantBatch:
    variants: list
    noise_sigma: float
    source_hash: str

    def __len__(self):
        return len(self.variants)

    def __getitem__(self, k) -> Graph:
        return self.variants[k]


def variant_rng(seed, k: int) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        seed = seed.entropy
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))


def perturb_adjacency(adj: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """One noisy copy of ``adj``; noise is drawn on the upper triangle and mirrored."""
    n = adj.shape[0]
    noise = np.triu(rng.normal(0.0, sigma, size=(n, n)), 1)
    noise += noise.T
    support = adj > 0
    out = sanitize(adj + noise * support)
    out[~support] = 0.0
    return out


def generate_variants(parent: Graph, k: int = 10, sigma: float = 0.1, seed=0) -> VariantBatch:
    """``k`` variants of ``parent`` sharing its feature and label arrays."""
    if k < 1:
        raise ValueError("need at least one variant")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    adj = parent.adjacency
    variants = []
    for i in range(k):
        if sigma == 0:
            variants.append(parent.with_adjacency(adj))
        else:
            variants.append(parent.with_adjacency(perturb_adjacency(adj, sigma, variant_rng(seed, i))))
    return VariantBatch(variants, float(sigma), adjacency_digest(adj))
