"""Analytic bounds and first-order estimates of the crash error.

b1: norm-product bound (worst case and mean form, plus an infinity-norm
    first-order form).
b2: element-wise absolute-value matrix-product bound on E|Delta|.
b3: first-order Taylor moments in the crash indicators, in activation form
    and in weight form.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core_math import matrix_norm
from .fault_injection import as_crash, single_crash_sweep
from .gradients import backprop_batch, xi_derivatives_batch
from .network import as_head, forward_batch


@dataclass
class BoundReport:
    method: str
    mean_bound: object
    variance_estimate: Optional[float] = None
    remainder: Optional[dict] = None
    warnings: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        mb = self.mean_bound
        return {"method": self.method,
                "mean_bound": mb.tolist() if isinstance(mb, np.ndarray) else mb,
                "variance_estimate": self.variance_estimate, "remainder": self.remainder,
                "warnings": list(self.warnings), "meta": self.meta}


def _smooth_warnings(net, layers):
    lo = min(layers) if layers else 0
    if not net.is_smooth(lo):
        return ["nonsmooth_activation: relu breaks the Taylor expansion; first-order values are indicative only"]
    return []


def bound_spectral(net, x, p, mask=None):
    """Norm-product bounds on ||Delta_L||_2.

    The error after layer l obeys e_l <= ||W_l|| e_{l-1} + ||xi_l * y_l||,
    because crashed and surviving coordinates are disjoint and activations
    are 1-Lipschitz.  worst_case uses ||y_l|| (or the given mask), mean_bound
    replaces it by sqrt(p_l)||y_l|| (Jensen), and inf_norm_first_order is
    sum_l p_l n_l ||y_l||_inf prod_{k>l} ||W_k||_inf.
    """
    crash = as_crash(net, p)
    x = np.asarray(x, dtype=np.float64)
    ys = forward_batch(net, x[None]).y
    L = net.depth
    spec = [matrix_norm(W, "spectral_upper") for W in net.weights]
    infn = [matrix_norm(W, "inf") for W in net.weights]
    masks = None if mask is None else [np.asarray(m, dtype=bool) for m in mask]
    worst = mean = 0.0
    first = 0.0
    for l in range(L + 1):
        if l > 0:
            worst *= spec[l - 1]
            mean *= spec[l - 1]
        y = ys[l][0]
        pl = crash.p[l]
        if masks is not None:
            worst += float(np.linalg.norm(y[masks[l]]))
        elif pl > 0.0:
            worst += float(np.linalg.norm(y))
        if pl > 0.0:
            mean += np.sqrt(pl) * float(np.linalg.norm(y))
            first += pl * y.size * float(np.max(np.abs(y))) * float(np.prod(infn[l:]))
    return BoundReport("b1", float(mean), None, None, [],
                       {"worst_case": float(worst), "mean_form": float(mean),
                        "inf_norm_first_order": float(first), "spectral_norms": spec,
                        "spectral_product": float(np.prod(spec))})


def bound_absolute(net, x, p):
    """E|Delta_L| <= sum_l p_l |W_L|...|W_{l+1}| |y_l|, component-wise."""
    crash = as_crash(net, p)
    x = np.asarray(x, dtype=np.float64)
    ys = forward_batch(net, x[None]).y
    acc = np.zeros(net.widths[0])
    for l in range(net.depth + 1):
        if l > 0:
            acc = np.abs(net.weights[l - 1]) @ acc
        acc = acc + crash.p[l] * np.abs(ys[l][0])
    return BoundReport("b2", acc, None, None, [], {"note": "valid for 1-Lipschitz activations"})


def _crash_layers(crash):
    return [l for l, pl in enumerate(crash.p) if pl > 0.0]


def _remainders(net, crash, layers, D12, D2):
    if D12 is None:
        return None
    D2 = D12 if D2 is None else D2
    per = {}
    for l in layers:
        r = crash.p[l] + 1.0 / net.widths[l]
        per[str(l)] = {"r": r, "mean_remainder": D2 * r * r, "variance_remainder": D12 * r ** 3}
    return {"per_layer": per,
            "mean_remainder": sum(v["mean_remainder"] for v in per.values()),
            "variance_remainder": sum(v["variance_remainder"] for v in per.values()),
            "note": "magnitudes without the unspecified order-one constants; the variance term uses "
                    "D12 r^3 (a squared-derivative variant D12^2 r^3 also appears in the derivation)"}


def taylor_terms(net, X, crash, head, T=None):
    """Per-example first-order mean and variance, and per-layer contributions."""
    v, _ = xi_derivatives_batch(net, np.atleast_2d(X), head, T)
    B = v[0].shape[0]
    mean = np.zeros(B)
    var = np.zeros(B)
    per = {}
    for l in _crash_layers(crash):
        m_l = crash.p[l] * v[l].sum(axis=1)
        v_l = crash.p[l] * np.einsum("bi,bi->b", v[l], v[l])
        mean += m_l
        var += v_l
        per[l] = (m_l, v_l)
    return mean, var, per


def bound_taylor(net, x, crash, head=None, D12=None, D2=None, target=None):
    """First-order crash moments: mean = sum p_l sum v, variance = sum p_l sum v^2."""
    crash = as_crash(net, crash)
    head = as_head(head)
    layers = _crash_layers(crash)
    mean, var, per = taylor_terms(net, np.atleast_2d(x), crash, head, target)
    meta = {"per_layer": {str(l): {"mean": float(m[0]), "variance": float(v[0])} for l, (m, v) in per.items()}}
    if D12 is None:
        meta["order"] = "first order only"
    return BoundReport("b3", float(mean[0]), float(var[0]), _remainders(net, crash, layers, D12, D2),
                       _smooth_warnings(net, layers), meta)


def bound_taylor_dataset(net, X, crash, head, T=None):
    """Dataset averages: E_x mean, and total variance E_x Var + Var_x mean."""
    crash = as_crash(net, crash)
    mean, var, _ = taylor_terms(net, X, crash, as_head(head), T)
    total = float(np.mean(var) + np.var(mean))
    return BoundReport("b3", float(np.mean(mean)), total, None, _smooth_warnings(net, _crash_layers(crash)),
                       {"inputs": int(mean.size), "mean_of_variances": float(np.mean(var)),
                        "variance_of_means": float(np.var(mean))})


def bound_taylor_weightform(net, x, crash, head=None, target=None):
    """The same first-order moments computed from W * dhead/dW.

    A crash of layer l removes the columns of W_{l+1}; crashes of the output
    layer have no outgoing weights and use the activation form.
    """
    crash = as_crash(net, crash)
    head = as_head(head)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    mean = var = 0.0
    notes = []
    b = backprop_batch(net, x, head, target)
    for l in _crash_layers(crash):
        if l < net.depth:
            Xs = net.weights[l] * b.d_weights[l]
            z = -Xs.sum(axis=0)
            mean += -crash.p[l] * float(Xs.sum())
        else:
            z = -b.d_act[l][0] * b.trace.y[l][0]
            mean += crash.p[l] * float(z.sum())
            notes.append("output-layer crashes use the activation form")
        var += crash.p[l] * float(np.dot(z, z))
    return BoundReport("b3_weight", mean, var, None, _smooth_warnings(net, _crash_layers(crash)),
                       {"notes": notes})


def bound_single_crash(net, x, crash, head=None, target=None):
    m = single_crash_sweep(net, x, None, head, crash=crash, target=target)
    return BoundReport("b4", m.mean, m.variance, None, [], m.meta)


def stationarity_mean(net, dataset, crash, spec, head=None):
    """-sum_l p_l <E_x dL/dW_{l+1}, W_{l+1}>, the first-order mean loss change."""
    from .network import Head
    crash = as_crash(net, crash)
    head = Head.of_loss(spec) if head is None else as_head(head)
    X, T = dataset.X, dataset.Y
    b = backprop_batch(net, X, head, T)
    n = X.shape[0]
    total = 0.0
    for l in _crash_layers(crash):
        if l >= net.depth:
            continue
        total -= crash.p[l] * float(np.sum(b.d_weights[l] / n * net.weights[l]))
    return total
