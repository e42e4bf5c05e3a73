"""Balance factor, Chernoff perturbation tail, Chebyshev certificate, median planning."""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core_math import kl_bernoulli


class InfeasibleError(ValueError):
    """The mean error already exceeds the budget; no variance bound can help."""


@dataclass
class Certificate:
    epsilon: float
    delta: float
    t: float
    mean: float
    variance: float
    delta0: Optional[float]
    method: str

    def to_dict(self):
        return dict(self.__dict__)


def q_factor(W):
    """min_i s_i / max_i s_i for the absolute row sums s_i of W."""
    s = np.abs(np.asarray(W, dtype=np.float64)).sum(axis=1)
    top = s.max()
    if top == 0.0:
        raise ValueError("q-factor undefined: all row sums are zero")
    return float(s.min() / top)


def outgoing_q(net, l):
    """Balance of the outgoing weight mass of the neurons of layer l < L."""
    return q_factor(net.weights[l].T)


def perturbation_tail_delta0(n_l, q, alpha, p_l):
    """exp(-n q KL(alpha || p)): chance the crashed weight share exceeds alpha."""
    if not 0.0 < p_l < alpha < 1.0:
        raise ValueError(f"need 0 < p < alpha < 1, got p={p_l}, alpha={alpha}")
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must lie in (0, 1], got {q}")
    if n_l < 1:
        raise ValueError("n must be positive")
    return float(min(1.0, math.exp(-n_l * q * kl_bernoulli(alpha, p_l))))


def default_alpha(p_l):
    return math.e ** 2 * p_l


def network_delta0(net, crash, alpha=None):
    """Union bound over crash-exposed layers l < L of the per-layer Chernoff tail.

    Returns (delta0, per-layer dicts).  A layer whose alpha reaches 1 gets
    the trivial bound 1.
    """
    total = 0.0
    per = []
    for l, pl in enumerate(crash.p[:-1]):
        if pl <= 0.0:
            continue
        a = default_alpha(pl) if alpha is None else alpha
        n = net.widths[l]
        try:
            q = outgoing_q(net, l)
        except ValueError:
            q = 0.0
        if a >= 1.0 or q <= 0.0:
            d0 = 1.0
        else:
            d0 = perturbation_tail_delta0(n, q, a, pl)
        per.append({"layer": l, "n": n, "q": q, "alpha": a, "delta0": d0})
        total += d0
    return min(1.0, total), per


def chebyshev_certificate(mean, variance, epsilon, delta0=None):
    """delta = delta0 + Var / (epsilon - mean)^2, clamped to 1."""
    t = epsilon - mean
    if t <= 0.0:
        raise InfeasibleError(f"infeasible: mean error {mean:.6g} exceeds budget {epsilon:.6g}")
    d = (delta0 or 0.0) + variance / (t * t)
    return Certificate(epsilon, float(min(1.0, d)), float(t), float(mean), float(variance),
                       delta0, "chebyshev" if delta0 is None else "chebyshev_plus_delta0")


def majority_failure(delta_base, R):
    """Exact chance that at least (R+1)/2 of R independent trials fail."""
    from scipy.stats import binom
    return float(binom.sf((R - 1) // 2, R, delta_base))


def median_repetitions(delta_base, delta_target, rule="power"):
    """Smallest odd R for the median of R replicas.

    rule="power" solves delta_base^(R/2) <= delta_target.  rule="exact"
    uses the binomial majority tail instead.  R = 1 when the base already
    meets the target.
    """
    if delta_base > 1.0 / 3.0:
        raise ValueError(f"base failure probability {delta_base:.4g} > 1/3: certify the single network first")
    if not 0.0 < delta_target < 1.0:
        raise ValueError("target must lie in (0, 1)")
    if delta_base <= delta_target:
        return 1
    if delta_base <= 0.0:
        return 1
    if rule == "power":
        R = math.ceil(2.0 * math.log(delta_target) / math.log(delta_base))
        # guard against rounding in the logarithms
        while delta_base ** (R / 2.0) > delta_target:
            R += 1
        while R > 1 and delta_base ** ((R - 1) / 2.0) <= delta_target:
            R -= 1
        return R if R % 2 == 1 else R + 1
    if rule == "exact":
        R = 1
        while majority_failure(delta_base, R) > delta_target:
            R += 2
        return R
    raise ValueError(f"unknown rule {rule!r}")


@dataclass
class CheckResult:
    certificate: Optional[Certificate]
    empirical: object
    delta0_layers: list = field(default_factory=list)
    status: str = "ok"

    def to_dict(self):
        return {"status": self.status,
                "certificate": None if self.certificate is None else self.certificate.to_dict(),
                "empirical": self.empirical.to_dict() if self.empirical is not None else None,
                "delta0_layers": self.delta0_layers}


def check_ft(net, dataset, crash, spec, epsilon, alpha=None, include_delta0=True, samples_per_input=200,
             seed=0, head=None, threads=None):
    """First-order certificate over the dataset, cross-checked by sampling."""
    from .bounds import bound_taylor_dataset
    from .fault_injection import as_crash, empirical_tail
    from .network import Head, as_head

    crash = as_crash(net, crash)
    h = Head.of_loss(spec) if head is None else as_head(head)
    rep = bound_taylor_dataset(net, dataset.X, crash, h, dataset.Y)
    d0, per = network_delta0(net, crash, alpha)
    emp = empirical_tail(net, dataset, crash, spec, epsilon, samples_per_input, seed, threads, head=h) \
        if samples_per_input > 0 else None
    try:
        cert = chebyshev_certificate(rep.mean_bound, rep.variance_estimate, epsilon,
                                     d0 if include_delta0 else None)
        status = "ok"
    except InfeasibleError:
        cert, status = None, "infeasible"
    return CheckResult(cert, emp, per, status)
