"""Reverse-mode gradients, crash-indicator derivatives and curvature checks."""
from dataclasses import dataclass

import numpy as np

from .core_math import matrix_norm
from .network import activate, activate_deriv, as_head, forward_batch


@dataclass
class GradientBundle:
    """Gradients of one scalar head.

    d_act[l] is d head / d y_l (l = 0..L), taken with respect to the value
    passed on after any output multiplier; d_weights[l-1] and d_bias[l-1] are
    the gradients for layer l.  For a batch the activation gradients keep
    the batch axis while parameter gradients are summed over it.
    """
    value: np.ndarray
    d_act: list
    d_weights: list
    d_bias: list
    trace: object = None


def backward(net, trace, g_out, need_params=True):
    """Backpropagate g_out = d head / d output through a recorded trace."""
    L = net.depth
    d_act = [None] * (L + 1)
    dW, db = [None] * L, [None] * L
    g = g_out
    d_act[L] = g
    for l in range(L, 0, -1):
        ly = net.layers[l - 1]
        gz = g * activate_deriv(trace.z[l], ly.activation)
        if trace.mult is not None and trace.mult[l] is not None:
            gz = gz * trace.mult[l]
        if need_params:
            dW[l - 1] = gz.T @ trace.y[l - 1]
            db[l - 1] = gz.sum(axis=0)
        g = gz @ ly.weights
        d_act[l - 1] = g
    return d_act, dW, db


def backprop_batch(net, X, head, T=None, mult=None, need_params=True):
    head = as_head(head)
    tr = forward_batch(net, X, mult)
    val, g_out = head.value_grad(tr.output, T)
    d_act, dW, db = backward(net, tr, g_out, need_params)
    return GradientBundle(val, d_act, dW, db, tr)


def backprop(net, x, head=None, target=None):
    """Gradients of a single head at a single input."""
    b = backprop_batch(net, np.atleast_2d(x), head, target)
    if np.ndim(x) == 1:
        b.value = float(b.value[0])
        b.d_act = [g[0] for g in b.d_act]
    return b


def xi_derivatives_batch(net, X, head, T=None):
    """v[l][b, i] = -(d head / d y_l^i) * y_l^i for l = 0..L."""
    b = backprop_batch(net, X, head, T, need_params=False)
    return [-g * y for g, y in zip(b.d_act, b.trace.y)], b


def xi_derivative(net, x, l, head=None, target=None):
    if not 0 <= l <= net.depth:
        raise ValueError(f"layer {l} out of range 0..{net.depth}")
    v, _ = xi_derivatives_batch(net, np.atleast_2d(x), head, target)
    return v[l][0] if np.ndim(x) == 1 else v[l]


def weight_saliency(net, x, l, head=None, target=None):
    """X = W_{l+1} * dhead/dW_{l+1} and z_j = -sum_i X_ij for crashes of layer l.

    Only defined for l < L: a crash of layer l acts through the outgoing
    weights of the next layer.
    """
    if not 0 <= l < net.depth:
        raise ValueError(f"weight form needs 0 <= l < {net.depth}, got {l}")
    b = backprop_batch(net, np.atleast_2d(x), head, target)
    Xs = net.weights[l] * b.d_weights[l]
    return Xs, -Xs.sum(axis=0)


def hessian_diag(net, x, l, head=None, target=None, rel_step=1e-3):
    """Diagonal of d^2 head / d(y_l^i)^2 by central differences of gradients."""
    if not 0 <= l <= net.depth:
        raise ValueError(f"layer {l} out of range 0..{net.depth}")
    if not net.is_smooth(l):
        raise ValueError("hessian_diag needs smooth activations above the probed layer; relu is not twice differentiable")
    head = as_head(head)
    x = np.asarray(x, dtype=np.float64)
    y_l = forward_batch(net, x[None]).y[l][0]
    n = y_l.size
    h = rel_step * (1.0 + np.abs(y_l))
    # batch of 2n copies of y_l, each with one coordinate nudged
    Y = np.tile(y_l, (2 * n, 1))
    idx = np.arange(n)
    Y[idx, idx] += h
    Y[n + idx, idx] -= h
    g = _grad_from_layer(net, Y, l, head, target)
    return (g[idx, idx] - g[n + idx, idx]) / (2.0 * h)


def _grad_from_layer(net, Y, l, head, target):
    # forward/backward starting from activations of layer l
    zs, ys = [], [Y]
    for ly in net.layers[l:]:
        z = ys[-1] @ ly.weights.T + ly.bias
        zs.append(z)
        ys.append(activate(z, ly.activation))
    _, g = head.value_grad(ys[-1], target)
    for k in range(len(zs) - 1, -1, -1):
        ly = net.layers[l + k]
        g = (g * activate_deriv(zs[k], ly.activation)) @ ly.weights
    return g


def derivative_decay_report(nets, X, l=1, head=None, target=None):
    """Per network: (n_l, avg |d head/d y_l^i|, avg |H_ii|, prod ||W||_inf)."""
    X = np.atleast_2d(X)
    rows = []
    for net in nets:
        b = backprop_batch(net, X, head, target, need_params=False)
        d1 = float(np.mean(np.abs(b.d_act[l])))
        if net.is_smooth(l):
            H = np.array([hessian_diag(net, x, l, head, target) for x in X])
            d2 = float(np.mean(np.abs(H)))
        else:
            d2 = float("nan")
        prod = float(np.prod([matrix_norm(W, "inf") for W in net.weights]))
        rows.append({"width": net.widths[l], "avg_abs_d1": d1, "avg_abs_hii": d2, "prod_inf_norm": prod})
    return rows
