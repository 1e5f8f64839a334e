from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ggfwcmdp.fairness import (GgfWeights, LengthMismatch, ggf, make_exponential_weights, random_weights,
                               utilitarian_weights)
from oracles import exact_weights, ggf_brute

vectors = st.lists(st.floats(-50, 50), min_size=1, max_size=6)


def test_constant_vector_gives_constant():
    for n in (1, 3, 5):
        assert ggf(np.full(n, 2.5), make_exponential_weights(n)) == pytest.approx(2.5)


def test_three_element_example_matches_brute_force():
    v = (2, 1, 4)
    w = exact_weights(3)
    oracle = ggf_brute(v, w)
    assert oracle == Fraction(12, 7)
    assert ggf(v, make_exponential_weights(3)) == pytest.approx(12 / 7, abs=1e-14)


def test_utilitarian_two():
    assert ggf([1, 3], utilitarian_weights(2)) == pytest.approx(2.0)


def test_exponential_weights_values():
    assert np.allclose(make_exponential_weights(1), [1.0])
    assert np.allclose(make_exponential_weights(2), [2 / 3, 1 / 3])
    assert np.allclose(make_exponential_weights(3), [float(w) for w in exact_weights(3)], atol=1e-15)
    assert np.all(np.diff(make_exponential_weights(6)) < 0)


def test_utilitarian_weights():
    assert np.allclose(utilitarian_weights(4), 0.25)
    assert np.allclose(utilitarian_weights(1), 1.0)


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        ggf([1, 2, 3], utilitarian_weights(2))


def test_weights_rejected_not_sorted():
    with pytest.raises(ValueError):
        GgfWeights([0.2, 0.8])
    with pytest.raises(ValueError):
        GgfWeights([0.6, 0.6])


@settings(max_examples=200, deadline=None)
@given(vectors, st.integers(0, 2**32 - 1))
def test_ggf_equals_brute_force_min(v, seed):
    w = random_weights(len(v), np.random.default_rng(seed))
    assert ggf(v, w) == pytest.approx(ggf_brute(v, w), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(vectors, st.integers(0, 2**32 - 1))
def test_ggf_below_mean_and_permutation_invariant(v, seed):
    r = np.random.default_rng(seed)
    w = random_weights(len(v), r)
    assert ggf(v, w) <= np.mean(v) + 1e-9
    assert ggf(r.permutation(v), w) == pytest.approx(ggf(v, w), abs=1e-12)
    assert ggf(v, utilitarian_weights(len(v))) == pytest.approx(np.mean(v), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_ggf_concave(n, seed, t):
    r = np.random.default_rng(seed)
    v1, v2 = r.normal(size=n), r.normal(size=n)
    w = random_weights(n, r)
    assert ggf(t * v1 + (1 - t) * v2, w) >= t * ggf(v1, w) + (1 - t) * ggf(v2, w) - 1e-12
