"""Iterative train / measure / adjust loop that certifies crash tolerance.

Each iteration retrains from scratch with the current widths and
regularization weights, then runs the checks in a fixed order and changes
exactly one knob when a check fails:

    q < q_min          -> mu *= mu_mult
    delta0 > 1/3       -> crash-exposed hidden widths += width_increment
    R3 > C             -> psi *= psi_mult
    E Delta > epsilon  -> stop, infeasible
    delta > 1/3        -> widths += width_increment and lambda *= lambda_mult
    otherwise          -> certified, with R replicas for the median
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bounds import bound_taylor_dataset
from .fault_injection import CrashModel, _tail, replica_median_deltas
from .guarantees import InfeasibleError, chebyshev_certificate, median_repetitions, network_delta0, outgoing_q
from .network import Head, make_network
from .regularizer import RegWeights, complexity
from .trainer import TrainConfig, train

THRESHOLD = 1.0 / 3.0


@dataclass
class CertifyConfig:
    epsilon: float
    delta_prime: float
    complexity_C: float
    initial_widths: tuple
    p: tuple  # per layer 0..L
    max_iterations: int = 50
    width_increment: int = 100
    mu_mult: float = 2.0
    psi_mult: float = 2.0
    lambda_mult: float = 2.0
    lam0: float = 1e-6
    mu0: float = 1e-10
    psi0: tuple = (1e-4, 1e-2)
    q_min: float = 1e-2
    alpha: Optional[float] = None
    include_delta0: bool = True
    activation: str = "sigmoid"
    init: str = "continuous"
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.1
    lr_scaling: str = "mean_field"
    seed: int = 0
    median_base: float = THRESHOLD

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 < self.delta_prime < 1.0:
            raise ValueError("delta_prime must lie in (0, 1)")
        if len(self.p) != len(self.initial_widths):
            raise ValueError("need one crash probability per layer, input included")
        if any(not 0.0 <= v < 1.0 for v in self.p):
            raise ValueError("crash probabilities must lie in [0, 1)")

    def to_dict(self):
        d = dict(self.__dict__)
        d["initial_widths"] = list(self.initial_widths)
        d["p"] = list(self.p)
        d["psi0"] = list(self.psi0)
        return d


@dataclass
class CertificationResult:
    status: str
    R: int
    widths: list
    reg: RegWeights
    certificate: object
    iteration_log: list
    net: object = None
    notes: dict = field(default_factory=dict)

    def to_dict(self):
        return {"status": self.status, "R": self.R, "widths": list(self.widths),
                "reg": {"lambda": self.reg.lam, "mu": self.reg.mu, "psi": list(self.reg.psi), "nu": self.reg.nu},
                "certificate": None if self.certificate is None else self.certificate.to_dict(),
                "iteration_log": self.iteration_log, "notes": self.notes}


def certify(dataset, spec, cfg, log=None):
    """Run the loop; returns a CertificationResult."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    widths = list(cfg.initial_widths)
    L = len(widths) - 1
    crash = CrashModel(tuple(cfg.p))
    exposed = [l for l in range(L) if crash.p[l] > 0.0]
    hidden_exposed = [l for l in exposed if l > 0]
    lam, mu, psi = cfg.lam0, cfg.mu0, tuple(cfg.psi0)
    head = Head.of_loss(spec)
    entries = []
    net = None
    cert = None
    for it in range(1, cfg.max_iterations + 1):
        reg = RegWeights(lam=lam, mu=mu, psi=psi, layers=tuple(exposed))
        init = make_network(widths, cfg.activation, seed=cfg.seed, init=cfg.init)
        tc = TrainConfig(cfg.epochs, cfg.batch_size, cfg.learning_rate, reg, None, cfg.seed, cfg.lr_scaling)
        net = train(init, dataset, tc, spec).net
        e = {"iteration": it, "widths": list(widths), "lambda": lam, "mu": mu, "psi": list(psi)}
        e["q"] = min((outgoing_q(net, l) for l in exposed), default=1.0) if exposed else 1.0
        e["delta0"], _ = network_delta0(net, crash, cfg.alpha)
        e["R3"] = complexity(net)
        rep = bound_taylor_dataset(net, dataset.X, crash, head, dataset.Y)
        e["mean"], e["variance"] = rep.mean_bound, rep.variance_estimate
        e["delta"] = None
        entries.append(e)
        if log:
            log(e)
        if e["q"] < cfg.q_min:
            mu *= cfg.mu_mult
            e["action"] = "increase mu"
            continue
        if e["delta0"] > THRESHOLD:
            if not hidden_exposed:
                e["action"] = "delta0 too large and no hidden layer to widen"
                break
            for l in hidden_exposed:
                widths[l] += cfg.width_increment
            e["action"] = "increase n"
            continue
        if e["R3"] > cfg.complexity_C:
            psi = (psi[0] * cfg.psi_mult, psi[1] * cfg.psi_mult)
            e["action"] = "increase psi"
            continue
        try:
            cert = chebyshev_certificate(e["mean"], e["variance"], cfg.epsilon,
                                         e["delta0"] if cfg.include_delta0 else None)
        except InfeasibleError:
            e["action"] = "infeasible: mean exceeds epsilon"
            return CertificationResult("infeasible", 0, widths, reg, None, entries, net)
        e["delta"] = cert.delta
        if cert.delta > THRESHOLD:
            for l in hidden_exposed:
                widths[l] += cfg.width_increment
            lam *= cfg.lambda_mult
            e["action"] = "increase n and lambda"
            continue
        R = median_repetitions(cfg.median_base, cfg.delta_prime)
        e["action"] = "certified"
        return CertificationResult("certified", R, widths, reg, cert, entries, net,
                                   {"median_base": cfg.median_base, "delta_prime": cfg.delta_prime,
                                    "median_bound": cfg.median_base ** (R / 2.0)})
    reg = RegWeights(lam=lam, mu=mu, psi=psi, layers=tuple(exposed))
    return CertificationResult("iteration_cap", 0, widths, reg, cert, entries, net)


def replicate_and_validate(result, net, dataset, crash, spec, samples=50_000, seed=0, R_values=None,
                           threads=None, slack=10.0, delta_prime=None):
    """Failure rate of the R-median system over (x, crashes).

    Trial t uses input t mod N and R fresh crash masks.  Also reports the
    rate for each R in R_values (default odd R up to result.R) to show the
    decay.
    """
    if result.status != "certified":
        raise ValueError("validation needs a certified result")
    head = Head.of_loss(spec)
    R_final = result.R
    if R_values is None:
        R_values = sorted(set(list(range(1, min(R_final, 9) + 1, 2)) + [R_final]))
    N = len(dataset)
    xidx = (np.arange(samples, dtype=np.int64) % N)
    eps = result.certificate.epsilon
    rows = []
    for i, R in enumerate(R_values):
        d = replica_median_deltas(net, dataset.X, xidx, crash, head, R, seed + 7919 * i, dataset.Y,
                                  threads=threads)
        t = _tail(d >= eps, {"R": R})
        rows.append({"R": R, "rate": t.rate, "std_error": t.std_error, "failures": t.failures,
                     "trials": t.trials, "upper_ci_95": t.upper_ci(), "bound": THRESHOLD ** (R / 2.0)})
    final = rows[-1]
    target = result.notes.get("delta_prime", delta_prime)
    ok = None if target is None else final["upper_ci_95"] <= slack * target
    return {"rows": rows, "final": final, "passed": ok, "slack": slack}
