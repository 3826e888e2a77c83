import numpy as np
import pytest

from mccgraph.cli import tune_allocator
from mccgraph.cohort import generate_cohort, standardize_features
from mccgraph.graph import Graph

tune_allocator()


def small_graph(n=6, f=3, seed=0, density=0.6, n_classes=32) -> Graph:
    rng = np.random.default_rng(seed)
    a = np.triu(rng.random((n, n)) * (rng.random((n, n)) < density), 1)
    a = a + a.T
    return Graph(a, rng.standard_normal((n, f)), rng.integers(0, n_classes, n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cohort_80():
    c = generate_cohort(80, 3)
    return standardize_features(c.factors), c.labels


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
