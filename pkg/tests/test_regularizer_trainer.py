import numpy as np
import pytest

from crashcert import Head, LossSpec, make_network
from crashcert.data import Dataset, synth_dataset
from crashcert.regularizer import (RegWeights, complexity, continuity_c1, continuity_c2, continuity_c3,
                                   regularized_loss, regularized_value)
from crashcert.trainer import TrainConfig, TrainingDivergedError, rank_loss, train


def test_continuity_metrics_by_hand():
    W = np.array([[0.0, 1.0, 3.0], [2.0, 2.0, 2.0]])
    assert continuity_c1(W) == 2 + 1 + 1
    assert continuity_c2(W) == pytest.approx(1.5 * (1 + 2 + 0 + 0))
    # a constant row is a fixed point of the reflect-mode smoother
    assert continuity_c3(np.full((3, 40), 0.7)) == pytest.approx(0.0, abs=1e-12)


def test_smooth_weights_have_low_c3():
    t = np.linspace(0, 1, 64)
    rough = np.random.default_rng(0).normal(size=(4, 64))
    smooth = np.tile(np.sin(2 * np.pi * t), (4, 1))
    assert continuity_c3(smooth) < 0.1 * continuity_c3(rough)


def test_regularizer_weights_validated():
    with pytest.raises(ValueError):
        RegWeights(lam=-1.0)


@pytest.mark.parametrize("reg", [RegWeights(lam=0.3), RegWeights(mu=1e-3), RegWeights(psi=(1e-3, 1e-3)),
                                 RegWeights(nu=1e-2), RegWeights(lam=0.1, mu=1e-4, psi=(1e-4, 1e-3))])
def test_regularized_gradient_matches_finite_differences(reg):
    net = make_network([2, 5, 4, 1], "sigmoid", seed=4)
    rng = np.random.default_rng(1)
    X = rng.uniform(-1, 1, (6, 2))
    T = rng.uniform(-0.5, 0.5, (6, 1))
    head = Head.of_loss(LossSpec("bounded_mse"))
    _, dW, _, _ = regularized_loss(net, X, T, head, reg)
    h = 1e-6
    for k in range(net.depth):
        num = np.zeros_like(net.weights[k])
        for idx in np.ndindex(num.shape):
            Ws = [w.copy() for w in net.weights]
            Ws[k][idx] += h
            up = regularized_value(net.replace_weights(Ws, net.biases), X, T, head, reg)
            Ws[k][idx] -= 2 * h
            dn = regularized_value(net.replace_weights(Ws, net.biases), X, T, head, reg)
            num[idx] = (up - dn) / (2 * h)
        err = np.abs(dW[k] - num).max() / max(np.abs(num).max(), 1e-8)
        assert err < 1e-4, (k, err)


def test_training_reduces_objective_and_is_deterministic():
    ds = synth_dataset("smooth-1d", 64, 0.0, 0)
    net = make_network([1, 16, 1], "sigmoid", seed=0, init="continuous")
    cfg = TrainConfig(epochs=20, batch_size=16, learning_rate=0.1, seed=3, lr_scaling="mean_field")
    a = train(net, ds, cfg)
    b = train(net, ds, cfg)
    assert min(a.history) < 0.8 * a.history[0]
    assert a.history == b.history
    assert all(np.array_equal(u, v) for u, v in zip(a.net.weights, b.net.weights))


def test_dropout_training_is_deterministic():
    ds = synth_dataset("smooth-1d", 32, 0.0, 0)
    net = make_network([1, 8, 1], "sigmoid", seed=0)
    cfg = TrainConfig(epochs=3, batch_size=8, dropout_p_train=(0.0, 0.2, 0.0), seed=1)
    assert train(net, ds, cfg).history == train(net, ds, cfg).history


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    ds = Dataset(np.array([[1.0]]), np.array([[0.5]]))
    net = make_network([1, 4, 1], "linear", seed=0)
    # the norm penalty's sign gradient with an absurd step overflows to inf
    cfg = TrainConfig(epochs=50, batch_size=1, learning_rate=1e308, reg=RegWeights(nu=1.0))
    with pytest.raises(TrainingDivergedError):
        train(net, ds, cfg)


def test_rank_loss():
    assert rank_loss([1, 2, 3, 4], [10, 20, 30, 40]) == 0.0
    assert rank_loss([4, 3, 2, 1], [10, 20, 30, 40]) == pytest.approx(6 / 16)
    assert rank_loss([1, 1, 1, 1], [10, 20, 30, 40]) == pytest.approx(3 / 16)


def test_complexity_sums_layers():
    net = make_network([3, 4, 1], "sigmoid", seed=0)
    want = sum(continuity_c1(W) + continuity_c2(W) + continuity_c3(W) for W in net.weights)
    assert complexity(net) == pytest.approx(want)
