import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mccgraph.variants import generate_variants

from conftest import small_graph


def test_sigma_zero_variants_equal_parent_bitwise():
    g = small_graph(8, 2, 1)
    batch = generate_variants(g, 4, 0.0, seed=3)
    assert len(batch) == 4
    for v in batch.variants:
        assert np.array_equal(v.adjacency, g.adjacency)
        assert v.features is g.features


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 15), st.floats(0.0, 1.0), st.integers(0, 1000))
def test_variant_support_and_invariants(n, sigma, seed):
    g = small_graph(n, 2, seed)
    for v in generate_variants(g, 3, sigma, seed).variants:
        a = v.adjacency
        assert np.array_equal(a, a.T) and not np.diag(a).any()
        assert a.min() >= 0 and a.max() <= 1
        assert np.all(a[g.adjacency == 0] == 0)
        assert np.array_equal(v.features, g.features)


def test_variants_deterministic_and_distinct():
    g = small_graph(10, 2, 5, density=0.9)
    a = generate_variants(g, 3, 0.1, seed=7)
    b = generate_variants(g, 3, 0.1, seed=7)
    assert all(np.array_equal(x.adjacency, y.adjacency) for x, y in zip(a.variants, b.variants))
    assert not np.array_equal(a[0].adjacency, a[1].adjacency)


def test_variant_errors():
    g = small_graph()
    with pytest.raises(ValueError):
        generate_variants(g, 0)
    with pytest.raises(ValueError):
        generate_variants(g, 2, -0.1)
