import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crashcert import RngStream, kl_bernoulli, matrix_norm, rng_draw
from crashcert.core_math import spectral_upper

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_kl_reference_value():
    # 0.1 ln 10 + 0.9 ln(0.9 / 0.99)
    assert kl_bernoulli(0.1, 0.01) == pytest.approx(0.1444797, abs=1e-6)


def test_kl_zero_on_diagonal_and_domain():
    assert kl_bernoulli(0.3, 0.3) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        kl_bernoulli(0.5, 1.0)
    with pytest.raises(ValueError):
        kl_bernoulli(-0.1, 0.5)


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_kl_nonnegative(a, b):
    assert kl_bernoulli(a, b) >= -1e-15


def test_norms_on_known_matrix():
    W = np.array([[1.0, -2.0], [3.0, 4.0]])
    assert matrix_norm(W, "inf") == 7.0
    assert matrix_norm(W, "one") == 6.0
    assert matrix_norm(W, "spectral_upper") >= np.linalg.norm(W, 2) * (1 - 1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_spectral_upper_close_to_sigma_max(W):
    # power iteration may stop a hair below sigma_max; the contract allows 1e-8 relative
    s = spectral_upper(W)
    true = np.linalg.norm(W, 2)
    assert s >= true * (1 - 1e-8) - 1e-12
    assert s <= true * (1 + 1e-6) + 1e-9


def test_spectral_upper_examples():
    assert spectral_upper(np.diag([3.0, 4.0])) == pytest.approx(4.0, abs=1e-8)
    W = np.random.default_rng(0).normal(size=(7, 5))
    s = spectral_upper(W)
    V = np.random.default_rng(1).normal(size=(100, 5))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    assert np.all(np.linalg.norm(V @ W.T, axis=1) <= s)


def test_empty_matrix_rejected():
    with pytest.raises(ValueError):
        matrix_norm(np.zeros((0, 3)), "inf")


def test_rng_draw_reproducible_and_offset_consistent():
    s = RngStream(7, 3)
    a = rng_draw(s, 100)
    assert np.array_equal(a, rng_draw(s, 100))
    assert np.array_equal(a[40:], rng_draw(s, 60, offset=40))
    assert np.all((a >= 0) & (a < 1))
    assert not np.array_equal(a, rng_draw(RngStream(7, 4), 100))


def test_rng_split_gives_distinct_streams():
    kids = [RngStream(1, 0).split(k) for k in range(4)]
    draws = [tuple(rng_draw(k, 5)) for k in kids]
    assert len(set(draws)) == 4


def test_uniforms_roughly_uniform():
    u = rng_draw(RngStream(0, 0), 200_000)
    assert abs(u.mean() - 0.5) < 0.005
    assert abs(u.var() - 1 / 12) < 0.002
