"""Fault-tolerance regularizer and weight-continuity metrics.

The regularized objective for a batch is

    L + lam * R1 + mu * sum R2 + sum smooth(W) + nu * sum ||W||_inf

R1 = batch mean of sum_l sum_i (dL/dy_l^i * y_l^i)^2 over the crash layers,
R2 = (max/min outgoing weight mass of a crash layer)^2,
smooth(W) = psi_deriv * (C1 + C2) + psi_smooth * C3.
"""
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .gradients import backward, backprop_batch
from .network import as_head, forward_batch

R2_CAP = 1e12


@dataclass(frozen=True)
class RegWeights:
    lam: float = 0.0
    mu: float = 0.0
    psi: tuple = (0.0, 0.0)
    nu: float = 0.0
    smoothing_sigma: Optional[float] = None
    layers: Optional[tuple] = None  # crash layers for R1/R2; None = 0..L-1

    def __post_init__(self):
        vals = (self.lam, self.mu, self.psi[0], self.psi[1], self.nu)
        if any(v < 0 for v in vals):
            raise ValueError("regularization weights must be non-negative")
        if self.smoothing_sigma is not None and self.smoothing_sigma <= 0:
            raise ValueError("smoothing sigma must be positive")

    def crash_layers(self, net):
        return tuple(range(net.depth)) if self.layers is None else tuple(self.layers)

    def with_(self, **kw):
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# continuity metrics
# ---------------------------------------------------------------------------

def continuity_c1(W):
    """Sum of absolute differences between adjacent rows."""
    W = np.asarray(W, dtype=np.float64)
    if W.shape[0] < 2:
        return 0.0
    return float(np.abs(np.diff(W, axis=0)).sum())


def continuity_c2(W):
    """Adjacent-column differences scaled by cols/rows."""
    W = np.asarray(W, dtype=np.float64)
    if W.shape[1] < 2:
        return 0.0
    return float(W.shape[1] / W.shape[0] * np.abs(np.diff(W, axis=1)).sum())


def default_sigma(n):
    return max(1.0, n / 32.0)


@lru_cache(maxsize=64)
def smoothing_matrix(n, sigma):
    """K with (K w)_j = Gaussian-smoothed w at j (reflect boundary, 3 sigma)."""
    K = gaussian_filter1d(np.eye(n), sigma, axis=0, mode="reflect", truncate=3.0)
    K.setflags(write=False)
    return K


def continuity_c3(W, sigma=None):
    """Mean over rows of sum_j |W_ij - (G * W_i)_j| with a Gaussian kernel G."""
    W = np.asarray(W, dtype=np.float64)
    sigma = default_sigma(W.shape[1]) if sigma is None else float(sigma)
    K = smoothing_matrix(W.shape[1], sigma)
    return float(np.abs(W - W @ K.T).sum() / W.shape[0])


def smooth(W, psi, sigma=None):
    return psi[0] * (continuity_c1(W) + continuity_c2(W)) + psi[1] * continuity_c3(W, sigma)


def _smooth_grad(W, psi, sigma=None):
    g = np.zeros_like(W)
    if psi[0] > 0.0:
        if W.shape[0] >= 2:
            S = np.sign(np.diff(W, axis=0))
            g[1:] += psi[0] * S
            g[:-1] -= psi[0] * S
        if W.shape[1] >= 2:
            c = psi[0] * W.shape[1] / W.shape[0]
            S = np.sign(np.diff(W, axis=1))
            g[:, 1:] += c * S
            g[:, :-1] -= c * S
    if psi[1] > 0.0:
        sigma = default_sigma(W.shape[1]) if sigma is None else float(sigma)
        K = smoothing_matrix(W.shape[1], sigma)
        S = np.sign(W - W @ K.T)
        g += psi[1] * (S - S @ K) / W.shape[0]
    return g


def _balance(W_next):
    """(R2, dR2/dW) for the outgoing-weight balance of the layer feeding W_next."""
    a = np.abs(W_next).sum(axis=0)
    i_max, i_min = int(np.argmax(a)), int(np.argmin(a))
    hi, lo = a[i_max], a[i_min]
    g = np.zeros_like(W_next)
    if lo <= 0.0:
        return R2_CAP, g
    val = (hi / lo) ** 2
    if val >= R2_CAP:
        return R2_CAP, g
    sgn = np.sign(W_next)
    g[:, i_max] += 2.0 * hi / lo ** 2 * sgn[:, i_max]
    g[:, i_min] -= 2.0 * hi ** 2 / lo ** 3 * sgn[:, i_min]
    return float(val), g


def _inf_norm(W):
    s = np.abs(W).sum(axis=1)
    i = int(np.argmax(s))
    g = np.zeros_like(W)
    g[i] = np.sign(W[i])
    return float(s[i]), g


# ---------------------------------------------------------------------------
# terms and objective
# ---------------------------------------------------------------------------

@dataclass
class RegTerms:
    R1: dict
    R2: dict
    R3: list
    R4: list
    continuity: list = field(default_factory=list)

    def to_dict(self):
        return {"R1": {str(k): v for k, v in self.R1.items()}, "R2": {str(k): v for k, v in self.R2.items()},
                "R3": self.R3, "R4": self.R4, "continuity": self.continuity}


def reg_terms(net, X, head, T=None, weights=None):
    """Per-layer regularizer values at the current weights."""
    weights = weights or RegWeights()
    b = backprop_batch(net, np.atleast_2d(X), head, T, need_params=False)
    B = b.d_act[0].shape[0]
    R1, R2 = {}, {}
    for l in weights.crash_layers(net):
        u = b.d_act[l] * b.trace.y[l]
        R1[l] = float(np.einsum("bi,bi->", u, u) / B)
        if l < net.depth:
            R2[l] = _balance(net.weights[l])[0]
    cont = [{"C1": continuity_c1(W), "C2": continuity_c2(W), "C3": continuity_c3(W, weights.smoothing_sigma)}
            for W in net.weights]
    R3 = [weights.psi[0] * (c["C1"] + c["C2"]) + weights.psi[1] * c["C3"] for c in cont]
    R4 = [_inf_norm(W)[0] for W in net.weights]
    return RegTerms(R1, R2, R3, R4, cont)


def complexity(net, sigma=None):
    """Unweighted C1 + C2 + C3 summed over the weight matrices."""
    return float(sum(continuity_c1(W) + continuity_c2(W) + continuity_c3(W, sigma) for W in net.weights))


def _scaled_mult(net, base_mult, layers, s):
    mult = [None] * (net.depth + 1) if base_mult is None else list(base_mult)
    for l in layers:
        m = 1.0 + s[l]
        mult[l] = m if mult[l] is None else mult[l] * m
    return mult


def regularized_loss(net, X, T, head, weights, mult=None, fd_target=1e-4):
    """Batch-mean regularized objective and its gradient.

    Returns (value, dW list, db list, parts).  The variance term's gradient
    uses a central difference of loss gradients under output scalings
    y_l -> y_l * (1 + s), with s = +/- h * u and u = dL/dy_l * y_l, which is
    a Hessian-vector product.  h is chosen so that max |h u| = fd_target.
    """
    head = as_head(head)
    X = np.atleast_2d(X)
    B = X.shape[0]
    tr = forward_batch(net, X, mult)
    val, g_out = head.value_grad(tr.output, T)
    d_act, dW, db = backward(net, tr, g_out)
    loss = float(val.mean())
    dW = [g / B for g in dW]
    db = [g / B for g in db]
    parts = {"loss": loss, "R1": 0.0, "R2": 0.0, "R3": 0.0, "R4": 0.0}
    layers = weights.crash_layers(net)

    if weights.lam > 0.0 and layers:
        u = {l: d_act[l] * tr.y[l] for l in layers}
        r1 = sum(float(np.einsum("bi,bi->", u[l], u[l])) for l in layers) / B
        parts["R1"] = r1
        umax = max(float(np.max(np.abs(u[l]))) for l in layers)
        if umax > 0.0:
            h = fd_target / umax
            grads = []
            for sgn in (1.0, -1.0):
                m = _scaled_mult(net, mult, layers, {l: sgn * h * u[l] for l in layers})
                t2 = forward_batch(net, X, m)
                _, go = head.value_grad(t2.output, T)
                _, gW, gb = backward(net, t2, go)
                grads.append((gW, gb))
            c = weights.lam * 2.0 / (2.0 * h * B)
            for k in range(net.depth):
                dW[k] = dW[k] + c * (grads[0][0][k] - grads[1][0][k])
                db[k] = db[k] + c * (grads[0][1][k] - grads[1][1][k])

    if weights.mu > 0.0:
        for l in layers:
            if l < net.depth:
                v, g = _balance(net.weights[l])
                parts["R2"] += v
                dW[l] = dW[l] + weights.mu * g

    if weights.psi[0] > 0.0 or weights.psi[1] > 0.0:
        for k, W in enumerate(net.weights):
            parts["R3"] += smooth(W, weights.psi, weights.smoothing_sigma)
            dW[k] = dW[k] + _smooth_grad(W, weights.psi, weights.smoothing_sigma)

    if weights.nu > 0.0:
        for k, W in enumerate(net.weights):
            v, g = _inf_norm(W)
            parts["R4"] += v
            dW[k] = dW[k] + weights.nu * g

    total = loss + weights.lam * parts["R1"] + weights.mu * parts["R2"] + parts["R3"] + weights.nu * parts["R4"]
    return total, dW, db, parts


def regularized_value(net, X, T, head, weights):
    """Objective value only (no gradient work)."""
    head = as_head(head)
    X = np.atleast_2d(X)
    B = X.shape[0]
    b = backprop_batch(net, X, head, T, need_params=False)
    total = float(b.value.mean())
    layers = weights.crash_layers(net)
    if weights.lam > 0.0:
        total += weights.lam * sum(float(np.sum((b.d_act[l] * b.trace.y[l]) ** 2)) for l in layers) / B
    if weights.mu > 0.0:
        total += weights.mu * sum(_balance(net.weights[l])[0] for l in layers if l < net.depth)
    if weights.psi[0] > 0.0 or weights.psi[1] > 0.0:
        total += sum(smooth(W, weights.psi, weights.smoothing_sigma) for W in net.weights)
    if weights.nu > 0.0:
        total += weights.nu * sum(_inf_norm(W)[0] for W in net.weights)
    return total
