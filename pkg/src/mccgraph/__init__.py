"""Graph-variant optimization for multiple-chronic-condition prediction.

A GVAE prunes a patient-similarity graph, noisy variants of the pruned graph
are scored with a Laplacian-regularized GNN, and a bandit policy picks the
variant that seeds the next iteration.
"""
from .bandit import ArmStats, extract_context, lasso_fit, make_policy, mab_reward
from .cohort import generate_cohort, standardize_features, stratified_split
from .graph import Graph, build_laplacian, normalize_adjacency, read_graph, write_graph
from .gvae import GVAEConfig, kl_divergence, prune_edges, train_gvae
from .lrgnn import LRGNNConfig, evaluate, laplacian_penalty, train_lrgnn
from .orchestrator import ExperimentConfig, run_comparison, run_experiment, run_iteration
from .stats import mann_whitney_u, summarize
from .variants import generate_variants

__version__ = "0.1.0"

__all__ = [
    "ArmStats", "ExperimentConfig", "GVAEConfig", "Graph", "LRGNNConfig", "build_laplacian",
    "evaluate", "extract_context", "generate_cohort", "generate_variants", "kl_divergence",
    "lasso_fit", "laplacian_penalty", "mab_reward", "make_policy", "mann_whitney_u",
    "normalize_adjacency", "prune_edges", "read_graph", "run_comparison", "run_experiment",
    "run_iteration", "standardize_features", "stratified_split", "summarize", "train_gvae",
    "train_lrgnn", "write_graph",
]
