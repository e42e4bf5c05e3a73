import numpy as np
import pytest

from crashcert import CrashModel, Head, exact_moments, make_network
from crashcert.bounds import (bound_absolute, bound_single_crash, bound_spectral, bound_taylor,
                              bound_taylor_dataset, bound_taylor_weightform)
from crashcert.fault_injection import enumerate_deltas
from crashcert.regularizer import RegWeights, reg_terms


def test_averaging_net_b3_and_b4(avg4):
    x = np.ones(4)
    for b in (bound_taylor(avg4, x, 0.1), bound_single_crash(avg4, x, 0.1), bound_taylor_weightform(avg4, x, 0.1)):
        assert b.mean_bound == pytest.approx(-0.1, abs=1e-12)
        assert b.variance_estimate == pytest.approx(0.025, abs=1e-12)


def test_b3_remainder_diagnostics(avg4):
    b = bound_taylor(avg4, np.ones(4), 0.1, D12=1.0)
    r = b.remainder["per_layer"]["0"]["r"]
    assert r == pytest.approx(0.1 + 0.25)
    assert b.remainder["mean_remainder"] == pytest.approx(r * r)


def test_relu_warning():
    net = make_network([2, 3, 1], "relu", seed=0)
    assert bound_taylor(net, np.ones(2), 0.1).warnings


@pytest.mark.parametrize("seed", range(5))
def test_b2_and_b1_dominate(seed):
    net = make_network([3, 4, 3, 1], "sigmoid", seed=seed, scale=2.0)
    x = np.random.default_rng(seed).uniform(-1, 1, 3)
    crash = CrashModel.uniform(net, 0.05)
    masks, w, d = enumerate_deltas(net, x, crash)
    assert np.all(bound_absolute(net, x, crash).mean_bound >= np.abs(w @ d) - 1e-12)
    assert bound_absolute(net, x, crash).mean_bound[0] >= w @ np.abs(d[:, 0]) - 1e-12
    assert bound_spectral(net, x, crash).meta["worst_case"] >= np.max(np.linalg.norm(d, axis=1)) - 1e-12


def test_weight_form_equals_activation_form():
    rng = np.random.default_rng(0)
    for seed in range(10):
        net = make_network([3, 5, 4, 2], "sigmoid", seed=seed)
        x = rng.uniform(-1, 1, 3)
        crash = CrashModel((0.02, 0.05, 0.01, 0.0))
        a = bound_taylor(net, x, crash, Head.output(1))
        w = bound_taylor_weightform(net, x, crash, Head.output(1))
        assert w.mean_bound == pytest.approx(a.mean_bound, rel=1e-10, abs=1e-15)
        assert w.variance_estimate == pytest.approx(a.variance_estimate, rel=1e-10, abs=1e-15)


def test_R1_matches_per_layer_variance(small_sigmoid):
    x = np.array([0.2, -0.5, 0.3])
    crash = CrashModel.uniform(small_sigmoid, 0.03)
    b = bound_taylor(small_sigmoid, x, crash)
    r = reg_terms(small_sigmoid, x, Head.output(0), weights=RegWeights())
    for l in range(3):
        assert 0.03 * r.R1[l] == pytest.approx(b.meta["per_layer"][str(l)]["variance"], rel=1e-10)


def test_b3_close_to_exact_for_small_p(small_sigmoid):
    x = np.array([0.2, -0.5, 0.3])
    ex = exact_moments(small_sigmoid, x, 1e-3)
    b = bound_taylor(small_sigmoid, x, 1e-3)
    assert b.mean_bound == pytest.approx(ex.mean, rel=0.3)
    assert b.variance_estimate == pytest.approx(ex.variance, rel=0.3)


def test_dataset_total_variance(small_sigmoid):
    X = np.random.default_rng(0).uniform(-1, 1, (6, 3))
    r = bound_taylor_dataset(small_sigmoid, X, 0.02, Head.output(0))
    singles = [bound_taylor(small_sigmoid, x, 0.02) for x in X]
    means = np.array([s.mean_bound for s in singles])
    vars_ = np.array([s.variance_estimate for s in singles])
    assert r.mean_bound == pytest.approx(means.mean(), rel=1e-12)
    assert r.variance_estimate == pytest.approx(vars_.mean() + means.var(), rel=1e-12)
