import numpy as np
import pytest

from crashcert import CrashModel, Head, exact_moments, make_network, monte_carlo_moments
from crashcert.fault_injection import (ENUM_CAP, EnumerationCapError, crashed_outputs, enumerate_deltas,
                                       median_replica_sim, sample_masks, single_crash_sweep,
                                       superposition_check)
from crashcert.network import delta


def test_exact_moments_averaging(avg4):
    m = exact_moments(avg4, np.ones(4), 0.1)
    assert m.mean == pytest.approx(-0.1, abs=1e-12)
    assert m.variance == pytest.approx(0.1 * 0.9 / 4, abs=1e-12)
    assert m.samples == 16


def test_exact_tail_matches_binomial(avg4):
    # delta = -k/4 for k crashes; P(-delta >= 0.5) = P(k >= 2)
    m = exact_moments(avg4, np.ones(4), 0.1, Head.output(0, -1.0), epsilon=0.5)
    p = 0.1
    want = 1 - (1 - p) ** 4 - 4 * p * (1 - p) ** 3
    assert m.tail_freq == pytest.approx(want, abs=1e-12)


def test_monte_carlo_agrees_with_exact(small_sigmoid):
    x = np.array([0.5, -0.3, 0.8])
    ex = exact_moments(small_sigmoid, x, 0.05)
    mc = monte_carlo_moments(small_sigmoid, x, 0.05, samples=100_000, seed=5)
    assert abs(mc.mean - ex.mean) <= 4 * mc.std_error_of_mean
    assert mc.variance == pytest.approx(ex.variance, rel=0.05)


def test_enumeration_cap():
    net = make_network([30, 2, 1], "sigmoid", seed=0)
    with pytest.raises(EnumerationCapError, match="NP-hard"):
        exact_moments(net, np.zeros(30), 0.1)
    assert ENUM_CAP == 24


def test_p_zero_and_p_one(small_sigmoid):
    x = np.array([0.1, 0.2, 0.3])
    m = monte_carlo_moments(small_sigmoid, x, 0.0, samples=100, seed=0)
    assert m.mean == 0.0 and m.variance == 0.0
    crash = CrashModel.layers(small_sigmoid, 1.0, [1])
    ex = exact_moments(small_sigmoid, x, crash)
    mask = [np.zeros(n, bool) for n in small_sigmoid.widths]
    mask[1][:] = True
    assert ex.mean == pytest.approx(delta(small_sigmoid, x, mask)[0], abs=1e-14)
    assert ex.variance == pytest.approx(0.0, abs=1e-20)


def test_sampled_crash_rate():
    net = make_network([20, 30, 1], "sigmoid", seed=0)
    m = sample_masks(net, 0.2, seed=3, stream0=0, count=4000)
    assert abs(m[:, :50].mean() - 0.2) < 0.01
    assert not m[:, 50:].any()


def test_block_threading_is_deterministic(small_sigmoid):
    X = np.random.default_rng(0).uniform(-1, 1, (5, 3))
    xidx = np.arange(20_000) % 5
    a = crashed_outputs(small_sigmoid, X, xidx, 0.1, seed=9, threads=1)
    b = crashed_outputs(small_sigmoid, X, xidx, 0.1, seed=9, threads=3)
    assert np.array_equal(a, b)
    # a prefix run reproduces the prefix of a longer run
    c = crashed_outputs(small_sigmoid, X, xidx[:5000], 0.1, seed=9)
    assert np.array_equal(a[:5000], c)


def test_single_crash_sweep_on_averaging(avg4):
    s = single_crash_sweep(avg4, np.ones(4), 0, p_l=0.1)
    assert s.mean == pytest.approx(-0.1, abs=1e-14)
    assert s.variance == pytest.approx(0.025, abs=1e-14)


def test_enumerate_deltas_weights_sum_to_one(small_sigmoid):
    masks, w, d = enumerate_deltas(small_sigmoid, np.zeros(3), 0.2)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert masks.shape[0] == 2 ** 10 and d.shape == (1024, 1)


def test_superposition_defect_is_order_p():
    # crashes of two layers interact only through joint (order p^2) events
    net = make_network([3, 4, 1], "linear", seed=1)
    for p in (0.1, 0.01):
        r = superposition_check(net, np.ones(3), p, a=(0,), b=(1,))
        assert r["mean_rel_error"] < p
    with pytest.raises(ValueError):
        superposition_check(net, np.ones(3), 0.1, a=(0,), b=(0, 1))


def test_median_sim_rejects_even_R(avg4):
    with pytest.raises(ValueError):
        median_replica_sim(avg4, np.ones(4), 0.1, R=2)


def test_median_of_one_equals_single_tail(avg4):
    t = median_replica_sim(avg4, np.ones(4), 0.1, Head.output(0, -1.0), R=1, epsilon=0.5,
                           samples=50_000, seed=2)
    p = 0.1
    want = 1 - (1 - p) ** 4 - 4 * p * (1 - p) ** 3
    assert abs(t.rate - want) <= 4 * t.std_error


def test_backends_draw_identical_masks(small_sigmoid):
    from crashcert import _kernels
    if not _kernels.HAVE_NUMBA:
        pytest.skip("numba not installed")
    X = np.random.default_rng(0).uniform(-1, 1, (4, 3))
    xidx = np.arange(3000) % 4
    res = {}
    try:
        for name in ("numpy", "numba"):
            _kernels.set_backend(name)
            res[name] = (sample_masks(small_sigmoid, 0.2, 5, 0, 3000),
                         crashed_outputs(small_sigmoid, X, xidx, 0.2, seed=5))
    finally:
        _kernels.set_backend("numba")
    assert np.array_equal(res["numpy"][0], res["numba"][0])
    assert np.allclose(res["numpy"][1], res["numba"][1], rtol=0, atol=1e-13)
