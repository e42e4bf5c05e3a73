import numpy as np
import pytest

from crashcert import Head, Layer, LossSpec, Network, delta, forward, forward_crashed, loss, make_network
from crashcert.gradients import backprop, hessian_diag, weight_saliency, xi_derivative
from crashcert.network import empty_mask, forward_batch, full_mask


def test_layer_validation():
    with pytest.raises(ValueError):
        Layer(np.ones((2, 3)), np.ones(3), "sigmoid")
    with pytest.raises(ValueError):
        Layer(np.ones((2, 3)), np.ones(2), "tanh")
    with pytest.raises(ValueError):
        Network([Layer(np.ones((2, 3)), np.zeros(2), "linear"), Layer(np.ones((1, 3)), np.zeros(1), "linear")])


def test_last_layer_must_be_linear():
    with pytest.raises(ValueError):
        Network([Layer(np.ones((1, 2)), np.zeros(1), "sigmoid")])


def test_weights_are_read_only(small_sigmoid):
    with pytest.raises(ValueError):
        small_sigmoid.weights[0][0, 0] = 1.0


def test_forward_by_hand():
    W1 = np.array([[1.0, -1.0]])
    net = Network([Layer(W1, np.array([0.5]), "sigmoid"), Layer(np.array([[2.0]]), np.array([-1.0]), "linear")])
    x = np.array([0.3, 0.1])
    h = 1 / (1 + np.exp(-(0.2 + 0.5)))
    assert forward(net, x).output[0] == pytest.approx(2 * h - 1, rel=1e-14)


def test_empty_mask_is_clean_and_full_mask_zeroes(small_sigmoid):
    x = np.array([0.2, -0.4, 0.9])
    assert np.array_equal(forward_crashed(small_sigmoid, x, empty_mask(small_sigmoid)).output,
                          forward(small_sigmoid, x).output)
    # everything crashed except the linear output layer -> output is its bias
    m = full_mask(small_sigmoid)
    m[-1][:] = False
    assert np.allclose(forward_crashed(small_sigmoid, x, m).output, small_sigmoid.biases[-1])


def test_delta_on_averaging_net(avg4):
    m = empty_mask(avg4)
    m[0][1] = True
    assert delta(avg4, np.ones(4), m)[0] == pytest.approx(-0.25)


def test_bounded_losses():
    assert loss(np.array([3.0]), LossSpec("bounded_mse", np.array([0.0]))) == 1.0
    assert loss(np.array([0.5]), LossSpec("bounded_mse", np.array([0.0]))) == 0.25
    v = loss(np.array([1.0, 3.0, 2.0]), LossSpec("bounded_margin", 1, scale=0.1))
    assert v == pytest.approx(-0.1)


def test_backprop_matches_finite_differences(small_sigmoid):
    x = np.array([0.3, -0.2, 0.7])
    g = backprop(small_sigmoid, x, Head.output(0))
    h = 1e-6
    for k, W in enumerate(small_sigmoid.weights):
        num = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            Ws = [w.copy() for w in small_sigmoid.weights]
            Ws[k][idx] += h
            up = forward(small_sigmoid.replace_weights(Ws, small_sigmoid.biases), x).output[0]
            Ws[k][idx] -= 2 * h
            dn = forward(small_sigmoid.replace_weights(Ws, small_sigmoid.biases), x).output[0]
            num[idx] = (up - dn) / (2 * h)
        assert np.allclose(g.d_weights[k], num, rtol=1e-5, atol=1e-9)


def test_xi_derivative_matches_scaling_derivative(small_sigmoid):
    x = np.array([0.3, -0.2, 0.7])
    v = xi_derivative(small_sigmoid, x, 1)
    # v_i = -y_i * dOut/dy_i, compare to scaling y_i by (1 - t)
    h = 1e-6
    for i in range(small_sigmoid.widths[1]):
        mult = [None] * (small_sigmoid.depth + 1)
        m = np.ones(small_sigmoid.widths[1])
        m[i] = 1 - h
        mult[1] = m[None]
        up = forward_batch(small_sigmoid, x[None], mult).output[0, 0]
        m[i] = 1 + h
        dn = forward_batch(small_sigmoid, x[None], mult).output[0, 0]
        assert v[i] == pytest.approx((up - dn) / (2 * h), rel=1e-5, abs=1e-10)


def test_weight_saliency_shapes(small_sigmoid):
    X, z = weight_saliency(small_sigmoid, np.zeros(3), 1)
    assert X.shape == small_sigmoid.weights[1].shape


def test_hessian_rejects_relu_above():
    net = make_network([2, 3, 3, 1], "relu", seed=0)
    with pytest.raises(ValueError):
        hessian_diag(net, np.ones(2), 1)


def test_make_network_init_modes():
    a = make_network([1, 50, 1], "sigmoid", seed=0, init="continuous")
    b = make_network([1, 50, 1], "sigmoid", seed=0, init="continuous")
    assert all(np.array_equal(u, v) for u, v in zip(a.weights, b.weights))
    # neighbouring rows of a continuous init are close
    W = a.weights[0][:, 0]
    assert np.mean(np.abs(np.diff(W))) < 0.2 * np.mean(np.abs(W))
