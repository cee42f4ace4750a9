import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kobdual.core_random import (
    RandomStream,
    bernstein_basis,
    hypergeometric_pmf,
    map_chunks,
    sample_binomial,
    sample_geometric_quarter,
    sample_hypergeometric,
    summarize,
)

from conftest import within


def test_same_identity_same_draws():
    a = RandomStream(7, (1, 2)).random(5)
    b = RandomStream(7, (1, 2)).random(5)
    assert np.array_equal(a, b)


def test_children_differ_from_parent_and_each_other():
    root = RandomStream(7)
    draws = [root.random(4), root.child(0).random(4), root.child(1).random(4)]
    assert not np.array_equal(draws[0], draws[1])
    assert not np.array_equal(draws[1], draws[2])


def test_child_extends_stream_id():
    assert RandomStream(3, 4).child(5, 6).stream_id == (4, 5, 6)


def test_negative_stream_id_rejected():
    with pytest.raises(ValueError):
        RandomStream(1, (-1,))


def test_geometric_level_weights():
    # weights (3/4)^(k-1) / 4 of the factory series
    x = sample_geometric_quarter(RandomStream(1), 10**6)
    assert x.min() >= 1
    assert within(summarize(x), 4.0)
    assert within(summarize(x == 1), 0.25)
    assert within(summarize(x == 2), 3.0 / 16.0)


def test_binomial_degenerate_and_mean(rng):
    assert sample_binomial(5, 0.0, rng) == 0
    assert sample_binomial(5, 1.0, rng) == 5
    assert within(summarize(sample_binomial(10, 0.3, rng, 10**5)), 3.0)


def test_binomial_rejects_bad_p(rng):
    with pytest.raises(ValueError):
        sample_binomial(3, 1.5, rng)


def test_hypergeometric_degenerate_cases(rng):
    assert sample_hypergeometric(1, 1, 0, rng) == 0
    assert sample_hypergeometric(1, 1, 1, rng) == 1
    assert np.all(sample_hypergeometric(4, 4, 2, rng, 100) == 2)


def test_hypergeometric_matches_exact_pmf(rng):
    x = sample_hypergeometric(6, 3, 3, rng, 10**5)
    pmf = hypergeometric_pmf(6, 3, 3)
    assert pmf.sum() == pytest.approx(1.0)
    for j, pj in enumerate(pmf):
        assert within(summarize(x == j), pj)


def test_bernstein_small_cases():
    assert np.allclose(bernstein_basis(1, 0.3), [0.7, 0.3])
    assert np.allclose(bernstein_basis(2, 0.5), [0.25, 0.5, 0.25])


@given(st.integers(0, 60), st.floats(0.0, 1.0))
def test_bernstein_partition_of_unity(n, y):
    b = bernstein_basis(n, y)
    assert b.shape == (n + 1,)
    assert abs(b.sum() - 1.0) <= 1e-12
    assert np.all(b >= 0.0)


@given(st.integers(0, 20), st.floats(0.0, 1.0))
@settings(max_examples=50)
def test_bernstein_matches_binomial_formula(n, y):
    exact = [math.comb(n, i) * y**i * (1 - y) ** (n - i) for i in range(n + 1)]
    assert np.allclose(bernstein_basis(n, y), exact, atol=1e-13)


def test_bernstein_vectorized_shape():
    assert bernstein_basis(3, np.array([0.1, 0.2])).shape == (2, 4)


def test_summarize_small_samples():
    s = summarize([1, 1, 1, 1])
    assert (s.mean, s.std_error) == (1.0, 0.0)
    s = summarize([0, 1])
    assert s.mean == 0.5 and s.std_error == pytest.approx(0.5)
    with pytest.raises(ValueError):
        summarize([1.0])


def test_summarize_uniform(rng):
    assert within(summarize(rng.random(10**5)), 0.5)


def test_z_score():
    a = summarize([0, 1])
    assert a.z_score(0.5) == 0.0
    assert a.z_score(a) == 0.0


@pytest.mark.parametrize("threads", [1, 3])
def test_map_chunks_independent_of_threads(threads):
    rng = RandomStream(99)
    ref = map_chunks(lambda s, n, r: r.random(n), 10_000, rng, 1, chunk_size=1000)
    out = map_chunks(lambda s, n, r: r.random(n), 10_000, rng, threads, chunk_size=1000)
    assert all(np.array_equal(a, b) for a, b in zip(ref, out))
    assert sum(len(a) for a in out) == 10_000
