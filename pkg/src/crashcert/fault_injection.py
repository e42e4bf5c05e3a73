"""Crash sampling, Monte Carlo and exact moment estimation, replica medians.

Sample s of a run with seed `seed` draws its mask from counter stream
`stream0 + s`, with one counter per neuron (layers concatenated, input
first).  Work is cut into fixed blocks of BLOCK samples that are processed
in any order by any number of threads and reassembled in sample order, so
results do not depend on the worker count.
"""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .network import Head, as_head

BLOCK = 4096
ENUM_CAP = 24


class EnumerationCapError(ValueError):
    pass


@dataclass(frozen=True)
class CrashModel:
    """Per-layer crash probabilities p[0..L] (index 0 is the input)."""
    p: tuple

    def __post_init__(self):
        p = tuple(float(v) for v in self.p)
        if any(not 0.0 <= v <= 1.0 for v in p):
            raise ValueError(f"crash probabilities must lie in [0, 1]: {p}")
        object.__setattr__(self, "p", p)

    @staticmethod
    def uniform(net, p, include_input=True, include_output=False):
        L = net.depth
        ps = [float(p)] * (L + 1)
        if not include_input:
            ps[0] = 0.0
        if not include_output:
            ps[L] = 0.0
        return CrashModel(tuple(ps))

    @staticmethod
    def layers(net, p, layers):
        ps = [0.0] * (net.depth + 1)
        for l in layers:
            ps[l] = float(p)
        return CrashModel(tuple(ps))

    def restrict(self, layers):
        keep = set(layers)
        return CrashModel(tuple(v if l in keep else 0.0 for l, v in enumerate(self.p)))

    def unit_probs(self, net):
        widths = net.widths
        if len(self.p) != len(widths):
            raise ValueError(f"crash model has {len(self.p)} layers, network needs {len(widths)}")
        return np.concatenate([np.full(n, v) for n, v in zip(widths, self.p)])


def as_crash(net, crash):
    """Accept a CrashModel, a scalar (hidden+input layers) or a per-layer list."""
    if isinstance(crash, CrashModel):
        return crash
    if np.ndim(crash) == 0:
        return CrashModel.uniform(net, float(crash))
    p = [float(v) for v in crash]
    if len(p) == net.depth:
        p = p + [0.0]
    return CrashModel(tuple(p))


@dataclass
class ErrorMoments:
    mean: float
    variance: float
    std_error_of_mean: float
    samples: int
    tail_freq: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {"mean": self.mean, "variance": self.variance, "std_error_of_mean": self.std_error_of_mean,
                "samples": self.samples, "tail_freq": self.tail_freq, "meta": self.meta}


def default_threads():
    try:
        return max(1, int(os.environ.get("CRASHCERT_THREADS", "1")))
    except ValueError:
        return 1


def _split_mask(net, flat):
    out, k = [], 0
    for n in net.widths:
        out.append(flat[..., k:k + n])
        k += n
    return out


def sample_mask(net, crash, stream):
    """One crash mask drawn from counters 0.. of the given stream."""
    crash = as_crash(net, crash)
    pu = crash.unit_probs(net)
    u = _kernels.uniforms(stream.seed, np.array([stream.stream_id], dtype=np.uint64),
                          np.arange(pu.size, dtype=np.uint64))[0]
    return [np.asarray(m) for m in _split_mask(net, u < pu)]


def sample_masks(net, crash, seed, stream0, count):
    """Masks for samples stream0 .. stream0+count-1 as a (count, units) array."""
    pu = as_crash(net, crash).unit_probs(net)
    u = _kernels.uniforms(seed, stream0 + np.arange(count, dtype=np.uint64),
                          np.arange(pu.size, dtype=np.uint64))
    return u < pu


def crashed_outputs(net, X, xidx, crash, seed, stream0=0, threads=None):
    """Outputs of crashed forward passes; row s uses input X[xidx[s]] and stream stream0+s."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    xidx = np.ascontiguousarray(xidx, dtype=np.int64)
    pu = np.ascontiguousarray(as_crash(net, crash).unit_probs(net))
    total = xidx.shape[0]
    out = np.empty((total, net.widths[-1]))
    packed = net.packed
    starts = range(0, total, BLOCK)

    def run(s0):
        s1 = min(s0 + BLOCK, total)
        _kernels.mc_forward(packed, X, xidx[s0:s1], pu, seed, stream0 + s0, out[s0:s1])

    threads = threads or default_threads()
    if threads <= 1 or total <= BLOCK:
        for s0 in starts:
            run(s0)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(run, starts))
    return out


def masked_outputs(net, X, xidx, masks):
    """Outputs for explicit flat masks (count, units)."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    out = np.empty((masks.shape[0], net.widths[-1]))
    _kernels.mask_forward(net.packed, X, np.ascontiguousarray(xidx, dtype=np.int64),
                          np.ascontiguousarray(masks, dtype=np.bool_), out)
    return out


def clean_outputs(net, X):
    """Uncrashed outputs through the same kernel as the crashed passes.

    Using one code path for both sides makes Delta exactly 0 when nothing
    crashes, independent of the backend's summation order.
    """
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    n = X.shape[0]
    return masked_outputs(net, X, np.arange(n, dtype=np.int64), np.zeros((n, sum(net.widths)), dtype=np.bool_))


def _moments_from(d, epsilon=None, meta=None):
    n = d.size
    mean = float(np.mean(d))
    var = float(np.var(d, ddof=1)) if n > 1 else 0.0
    tail = None if epsilon is None else float(np.mean(d >= epsilon))
    return ErrorMoments(mean, var, float(np.sqrt(var / n)), int(n), tail, meta or {})


def monte_carlo_moments(net, x, crash, head=None, samples=10_000, seed=0, target=None, epsilon=None,
                        threads=None, stream0=0):
    """Sample mean and (Bessel-corrected) variance of the head error."""
    if samples < 2:
        raise ValueError("need at least 2 samples")
    head = as_head(head)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = crashed_outputs(net, x, np.zeros(samples, dtype=np.int64), crash, seed, stream0, threads)
    clean = clean_outputs(net, x)
    d = head.value(out, target) - head.value(clean, target)[0]
    return _moments_from(d, epsilon, {"estimator": "monte_carlo", "seed": seed, "backend": _kernels.backend()})


def _crashable(net, crash):
    pu = crash.unit_probs(net)
    live = np.nonzero((pu > 0.0) & (pu < 1.0))[0]
    return pu, live


def exact_moments(net, x, crash, head=None, layer_subset=None, target=None, epsilon=None, chunk=1 << 16):
    """Exact mean and population variance of the head error by enumeration."""
    crash = as_crash(net, crash)
    if layer_subset is not None:
        crash = crash.restrict(layer_subset)
    head = as_head(head)
    pu, live = _crashable(net, crash)
    k = live.size
    if k > ENUM_CAP:
        raise EnumerationCapError(
            f"exact enumeration infeasible: {k} crashable neurons exceed the cap of {ENUM_CAP} "
            "(computing exact crash moments is NP-hard in general)")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    clean = head.value(clean_outputs(net, x), target)[0]
    base = pu >= 1.0
    p_live = pu[live]
    total = 1 << k
    vals, wts = [], []
    bits = np.arange(k, dtype=np.int64)
    for c0 in range(0, total, chunk):
        codes = np.arange(c0, min(c0 + chunk, total), dtype=np.int64)
        on = ((codes[:, None] >> bits) & 1).astype(bool)
        masks = np.tile(base, (codes.size, 1))
        masks[:, live] = on
        w = np.prod(np.where(on, p_live, 1.0 - p_live), axis=1)
        out = masked_outputs(net, x, np.zeros(codes.size, dtype=np.int64), masks)
        d = head.value(out, target) - clean
        vals.append(d)
        wts.append(w)
    d = np.concatenate(vals)
    w = np.concatenate(wts)
    mean = float(np.dot(w, d))
    var = float(np.dot(w, (d - mean) ** 2))
    tail = None if epsilon is None else float(w[d >= epsilon].sum())
    return ErrorMoments(mean, var, 0.0, int(total), tail,
                        {"estimator": "exact_enumeration", "crashable_neurons": int(k), "max_abs_delta": float(np.max(np.abs(d)))})


def enumerate_deltas(net, x, crash, at="output"):
    """All (mask, weight, output delta) triples; for bound-dominance checks."""
    crash = as_crash(net, crash)
    pu, live = _crashable(net, crash)
    if live.size > ENUM_CAP:
        raise EnumerationCapError(f"exact enumeration infeasible: {live.size} crashable neurons exceed the cap of {ENUM_CAP}")
    k = live.size
    codes = np.arange(1 << k, dtype=np.int64)
    on = ((codes[:, None] >> np.arange(k)) & 1).astype(bool)
    masks = np.tile(pu >= 1.0, (codes.size, 1))
    masks[:, live] = on
    w = np.prod(np.where(on, pu[live], 1.0 - pu[live]), axis=1)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = masked_outputs(net, x, np.zeros(codes.size, dtype=np.int64), masks)
    return masks, w, out - clean_outputs(net, x)


def single_crash_sweep(net, x, l, head=None, p_l=None, target=None, crash=None):
    """First-order moments from crashing one neuron at a time.

    With an integer l, returns p_l * sum(D_i) and p_l * sum(D_i^2) for that
    layer.  With l=None the per-layer values are summed over every layer
    with nonzero probability in `crash`.
    """
    head = as_head(head)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    clean = head.value(clean_outputs(net, x), target)[0]
    if l is None:
        crash = as_crash(net, crash)
        layers = [(k, pk) for k, pk in enumerate(crash.p) if pk > 0.0]
    else:
        if not 0 <= l <= net.depth:
            raise ValueError(f"layer {l} out of range")
        layers = [(l, float(p_l))]
    mean = var = 0.0
    per_layer = {}
    offsets = np.cumsum([0] + net.widths)
    units = offsets[-1]
    for k, pk in layers:
        n = net.widths[k]
        masks = np.zeros((n, units), dtype=bool)
        masks[np.arange(n), offsets[k] + np.arange(n)] = True
        out = masked_outputs(net, x, np.zeros(n, dtype=np.int64), masks)
        d = head.value(out, target) - clean
        per_layer[k] = (pk * float(d.sum()), pk * float(np.dot(d, d)))
        mean += per_layer[k][0]
        var += per_layer[k][1]
    return ErrorMoments(mean, var, 0.0, 0, None,
                        {"estimator": "single_crash_sweep", "order": "first order in p; (p sum D)^2 term dropped",
                         "per_layer": {str(k): v for k, v in per_layer.items()}})


def superposition_check(net, x, crash, head=None, a=(), b=(), target=None, method="exact", samples=200_000, seed=0):
    """Relative non-additivity of mean and variance across disjoint layer sets."""
    a, b = set(a), set(b)
    if a & b:
        raise ValueError(f"layer subsets overlap: {sorted(a & b)}")
    crash = as_crash(net, crash)

    def moments(layers):
        c = crash.restrict(layers)
        if method == "exact":
            return exact_moments(net, x, c, head, target=target)
        return monte_carlo_moments(net, x, c, head, samples, seed, target)

    mab, ma, mb = moments(a | b), moments(a), moments(b)

    def rel(ab, s):
        return abs(ab - s) / abs(ab) if ab != 0 else abs(ab - s)

    return {"mean_rel_error": rel(mab.mean, ma.mean + mb.mean),
            "variance_rel_error": rel(mab.variance, ma.variance + mb.variance),
            "union": mab.to_dict(), "a": ma.to_dict(), "b": mb.to_dict()}


@dataclass
class TailEstimate:
    rate: float
    std_error: float
    trials: int
    failures: int
    meta: dict = field(default_factory=dict)

    def upper_ci(self, level=0.95):
        from scipy.stats import beta
        if self.failures >= self.trials:
            return 1.0
        return float(beta.ppf(level, self.failures + 1, self.trials - self.failures))

    def to_dict(self):
        return {"rate": self.rate, "std_error": self.std_error, "trials": self.trials,
                "failures": self.failures, "upper_ci_95": self.upper_ci(), "meta": self.meta}


def _tail(fail, meta):
    n = fail.size
    k = int(fail.sum())
    r = k / n
    return TailEstimate(r, float(np.sqrt(max(r * (1.0 - r), 0.0) / n)), int(n), k, meta)


def replica_median_deltas(net, X, xidx, crash, head, R, seed, T=None, stream0=0, threads=None):
    """Per trial: head of the component-wise median output of R crashed replicas, minus clean head."""
    head = as_head(head)
    X = np.atleast_2d(X)
    trials = xidx.shape[0]
    out = crashed_outputs(net, X, np.repeat(xidx, R), crash, seed, stream0, threads)
    med = np.median(out.reshape(trials, R, -1), axis=1)
    Tx = None if T is None else np.asarray(T)[xidx]
    clean = head.value(clean_outputs(net, X)[xidx], Tx)
    return head.value(med, Tx) - clean


def median_replica_sim(net, x, crash, head=None, R=1, epsilon=0.0, samples=10_000, seed=0, target=None,
                       threads=None):
    """Failure rate of the median of R independently crashed replicas."""
    if R < 1 or R % 2 == 0:
        raise ValueError(f"R must be odd and positive, got {R}")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    T = None if target is None else np.atleast_2d(target)
    d = replica_median_deltas(net, x, np.zeros(samples, dtype=np.int64), crash, head, R, seed, T, threads=threads)
    return _tail(d >= epsilon, {"R": R, "epsilon": epsilon, "seed": seed})


def dataset_indices(n_inputs, samples_per_input):
    return np.repeat(np.arange(n_inputs, dtype=np.int64), samples_per_input)


def empirical_tail(net, dataset, crash, spec, epsilon, samples_per_input=100, seed=0, threads=None, head=None):
    """Joint (x, crash) frequency of loss increase >= epsilon."""
    head = as_head(head) if head is not None else Head.of_loss(spec)
    X, T = dataset.X, dataset.Y
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    xidx = dataset_indices(X.shape[0], samples_per_input)
    out = crashed_outputs(net, X, xidx, crash, seed, 0, threads)
    clean = head.value(clean_outputs(net, X), T)
    d = head.value(out, T[xidx]) - clean[xidx]
    return _tail(d >= epsilon, {"epsilon": epsilon, "samples_per_input": samples_per_input, "seed": seed})
