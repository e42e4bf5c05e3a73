"""Norms, Bernoulli KL divergence and counter-based random streams."""
from dataclasses import dataclass

import numpy as np

from . import _kernels


def _as_matrix(W):
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.size == 0:
        raise ValueError(f"expected a nonempty 2-D matrix, got shape {W.shape}")
    return W


def spectral_upper(W, tol=1e-10, max_iter=10_000):
    """Power-iteration estimate of the largest singular value of W.

    Iterates on W^T W.  The returned value sqrt(||W^T W v||) for the final
    unit iterate v sits between ||Wv|| (a lower bound) and sigma_max, and
    converges to sigma_max from below.  On stopping it is within about 1e-8
    relative of sigma_max, not a certified upper bound.
    """
    W = _as_matrix(W)
    A = W.T @ W
    n = A.shape[0]
    # fixed, non-degenerate start so the result is deterministic
    v = 1.0 + 0.01 * np.cos(np.arange(n) * 2.399963)
    v /= np.linalg.norm(v)
    prev = 0.0
    est = 0.0
    for _ in range(max_iter):
        Av = A @ v
        nrm = np.linalg.norm(Av)
        if nrm == 0.0:
            # v landed in the null space; restart from a basis vector
            # with the heaviest column
            k = int(np.argmax(np.einsum("ij,ij->j", W, W)))
            if A[k, k] == 0.0:
                return 0.0
            v = np.zeros(n)
            v[k] = 1.0
            continue
        est = np.sqrt(nrm)
        v = Av / nrm
        if prev > 0.0 and abs(est - prev) <= tol * est:
            break
        prev = est
    lower = np.linalg.norm(W @ v)
    return float(max(est, lower))


def matrix_norm(W, kind="inf"):
    W = _as_matrix(W)
    if kind == "inf":
        return float(np.abs(W).sum(axis=1).max())
    if kind == "one":
        return float(np.abs(W).sum(axis=0).max())
    if kind == "spectral_upper":
        return spectral_upper(W)
    raise ValueError(f"unknown norm kind {kind!r}")


def kl_bernoulli(a, b):
    """KL divergence between Bernoulli(a) and Bernoulli(b)."""
    for name, v in (("a", a), ("b", b)):
        if not 0.0 < v < 1.0:
            raise ValueError(f"{name}={v} must lie strictly inside (0, 1)")
    return float(a * np.log(a / b) + (1.0 - a) * np.log1p(-a) - (1.0 - a) * np.log1p(-b))


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def split(self, k):
        """A derived stream; stream ids are offset by multiples of 2^32."""
        return RngStream(self.seed, (self.stream_id + (int(k) + 1) * (1 << 32)) & 0xFFFFFFFFFFFFFFFF)


def rng_draw(stream, n, offset=0):
    """n uniforms in [0,1) from counters offset..offset+n-1 of the stream."""
    ctr = np.arange(offset, offset + n, dtype=np.uint64)
    return _kernels.uniforms(stream.seed, np.array([stream.stream_id], dtype=np.uint64), ctr)[0]
