import numpy as np
import pytest

from ldp_unifier.distributions import (
    Distribution,
    Empirical,
    binomial_distribution,
    empirical,
    pooled_empirical,
    sample_iid,
    split_seed,
)
from ldp_unifier.errors import DomainError


def test_binomial_small_cases():
    np.testing.assert_allclose(binomial_distribution(2, 0.5).probs, [0.5, 0.5])
    np.testing.assert_allclose(binomial_distribution(3, 0.5).probs, [0.25, 0.5, 0.25])
    np.testing.assert_allclose(binomial_distribution(1, 0.3).probs, [1.0])


@pytest.mark.parametrize('alpha', [0.0, 1.0, -0.2, 1.5])
def test_binomial_rejects_alpha(alpha):
    with pytest.raises(DomainError):
        binomial_distribution(5, alpha)


@pytest.mark.parametrize('probs', [[0.5, 0.6], [1.2, -0.2], [], [np.nan, 1.0]])
def test_distribution_rejects_invalid(probs):
    with pytest.raises(DomainError):
        Distribution(np.array(probs, dtype=float))


def test_distribution_is_read_only():
    d = Distribution.uniform(4)
    with pytest.raises(ValueError):
        d.probs[0] = 1.0


def test_point_mass_sampling():
    s = sample_iid(Distribution(np.array([1.0, 0.0])), 5, seed=99)
    assert s.values.tolist() == [0, 0, 0, 0, 0]


def test_sampling_frequency():
    s = sample_iid(Distribution(np.array([0.5, 0.5])), 10**6, seed=1)
    assert abs(np.mean(s.values == 0) - 0.5) < 0.002


def test_empty_sample():
    s = sample_iid(Distribution.uniform(3), 0, seed=3)
    assert len(s) == 0


def test_sampling_is_deterministic():
    d = binomial_distribution(10, 0.4)
    a = sample_iid(d, 1000, seed=5)
    b = sample_iid(d, 1000, seed=5)
    np.testing.assert_array_equal(a.values, b.values)


def test_empirical_counts():
    e = empirical(['a', 'a', 'b'])
    assert e.support == ('a', 'b')
    np.testing.assert_allclose(e.weights, [2 / 3, 1 / 3])
    assert e.total_count == 3
    assert e.counts.tolist() == [2, 1]


def test_empirical_singleton_and_empty():
    e = empirical(['x'])
    assert e.support == ('x',)
    np.testing.assert_array_equal(e.weights, [1.0])
    with pytest.raises(DomainError):
        empirical([])


def test_empirical_matches_recount(rng):
    draws = rng.choice(3, size=300, p=[0.5, 0.3, 0.2])
    e = empirical(draws)
    for symbol, weight in zip(e.support, e.weights):
        assert weight == np.count_nonzero(draws == symbol) / 300


def test_empirical_invariants():
    with pytest.raises(DomainError):
        Empirical(('a', 'a'), np.array([0.5, 0.5]), 2)
    with pytest.raises(DomainError):
        Empirical(('a', 'b'), np.array([0.5, 0.5]), 3)
    with pytest.raises(DomainError):
        Empirical(('a',), np.array([0.5]), 2)


def test_dense_and_from_counts():
    e = Empirical.from_counts({2: 3, 0: 1, 5: 0})
    assert e.support == (0, 2)
    np.testing.assert_allclose(e.dense(4), [0.25, 0, 0.75, 0])
    with pytest.raises(DomainError):
        e.dense(2)


def test_pooled_empirical_uses_raw_counts():
    a = empirical([0, 0, 1])
    b = empirical([1] * 7)
    pooled = pooled_empirical([a, b])
    assert pooled.total_count == 10
    np.testing.assert_allclose(pooled.dense(2), [0.2, 0.8])


def test_split_seed_streams():
    a = split_seed(7, 0, 1).random(5)
    b = split_seed(7, 0, 1).random(5)
    c = split_seed(7, 1, 0).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_empirical_converges_to_truth():
    d = binomial_distribution(8, 0.5)
    n = 10**4
    for seed in range(20):
        e = empirical(sample_iid(d, n, seed).values)
        tv = 0.5 * np.abs(e.dense(8) - d.probs).sum()
        assert tv <= 5 * np.sqrt(8 / n)
