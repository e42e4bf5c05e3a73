"""Hot loops: counter-based uniforms and crashed forward passes.

Every kernel exists twice, a numba ``@njit`` version and a pure-numpy
version.  The numba path is used when numba imports and the environment
variable ``CRASHCERT_DISABLE_NUMBA`` is unset (or ``0``).  Both paths draw
bit-identical uniforms; forward outputs agree to rounding.

Networks are passed to the kernels in packed form (see ``pack``): all weight
matrices concatenated row-major into one float array, with offset tables.
"""
import os

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
STREAM_GAMMA = np.uint64(0xD1B54A32D192ED03)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
TWO_M53 = 1.0 / 9007199254740992.0

ACT_LINEAR, ACT_SIGMOID, ACT_RELU = 0, 1, 2

try:  # pragma: no cover - exercised implicitly
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

_env_off = os.environ.get("CRASHCERT_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")
_backend = "numba" if (HAVE_NUMBA and not _env_off) else "numpy"


def backend():
    return _backend


def set_backend(name):
    """Switch kernels at runtime; returns the previous backend name."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    prev, _backend = _backend, name
    return prev


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------

def _mix64_np(z):
    z = (z ^ (z >> np.uint64(30))) * MIX1
    z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


def stream_keys_np(seed, streams):
    s = np.asarray(streams, dtype=np.uint64)
    base = _mix64_np(np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF)], dtype=np.uint64) + GOLDEN)
    return _mix64_np(base + s * STREAM_GAMMA)


def uniforms_np(seed, streams, counters):
    """Uniforms in [0,1) for the grid streams x counters."""
    keys = stream_keys_np(seed, streams)[:, None]
    c = np.asarray(counters, dtype=np.uint64)[None, :]
    v = _mix64_np(keys + (c + np.uint64(1)) * GOLDEN)
    return (v >> np.uint64(11)).astype(np.float64) * TWO_M53


def _sigmoid_np(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _act_np(z, code):
    if code == ACT_SIGMOID:
        return _sigmoid_np(z)
    if code == ACT_RELU:
        return np.maximum(z, 0.0)
    return z


def _unpack(wf, wo, bf, bo, dims, l):
    nin, nout = dims[l], dims[l + 1]
    W = wf[wo[l]:wo[l] + nin * nout].reshape(nout, nin)
    return W, bf[bo[l]:bo[l] + nout]


def mask_forward_np(wf, wo, bf, bo, dims, acts, uo, X, xidx, masks, out):
    Y = np.where(masks[:, uo[0]:uo[0] + dims[0]], 0.0, X[xidx])
    for l in range(len(acts)):
        W, b = _unpack(wf, wo, bf, bo, dims, l)
        Y = _act_np(Y @ W.T + b, acts[l])
        Y[masks[:, uo[l + 1]:uo[l + 1] + dims[l + 1]]] = 0.0
    out[:] = Y


def mc_forward_np(wf, wo, bf, bo, dims, acts, uo, X, xidx, p_units, seed, stream0, out):
    count = len(xidx)
    masks = np.zeros((count, len(p_units)), dtype=np.bool_)
    live = np.nonzero((p_units > 0.0) & (p_units < 1.0))[0]
    masks[:, p_units >= 1.0] = True
    if len(live):
        U = uniforms_np(seed, stream0 + np.arange(count, dtype=np.uint64), live)
        masks[:, live] = U < p_units[live]
    mask_forward_np(wf, wo, bf, bo, dims, acts, uo, X, xidx, masks, out)


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True, nogil=True, inline="always")
    def _mix64_nb(z):
        z = (z ^ (z >> np.uint64(30))) * MIX1
        z = (z ^ (z >> np.uint64(27))) * MIX2
        return z ^ (z >> np.uint64(31))

    @njit(cache=True, nogil=True)
    def _stream_key_nb(base, stream):
        return _mix64_nb(base + np.uint64(stream) * STREAM_GAMMA)

    @njit(cache=True, nogil=True, inline="always")
    def _uniform_nb(key, ctr):
        v = _mix64_nb(key + (np.uint64(ctr) + np.uint64(1)) * GOLDEN)
        return np.float64(v >> np.uint64(11)) * TWO_M53

    @njit(cache=True, nogil=True)
    def uniforms_nb(seed_u, streams, counters):
        base = _mix64_nb(seed_u + GOLDEN)
        out = np.empty((streams.shape[0], counters.shape[0]))
        for s in range(streams.shape[0]):
            key = _stream_key_nb(base, streams[s])
            for c in range(counters.shape[0]):
                out[s, c] = _uniform_nb(key, counters[c])
        return out

    @njit(cache=True, nogil=True, inline="always")
    def _act_nb(z, code):
        if code == 1:
            if z >= 0.0:
                return 1.0 / (1.0 + np.exp(-z))
            e = np.exp(z)
            return e / (1.0 + e)
        if code == 2:
            return z if z > 0.0 else 0.0
        return z

    @njit(cache=True, nogil=True)
    def _forward_one(wf, wo, bf, bo, dims, acts, uo, x, crashed, a, b, out_row):
        n0 = dims[0]
        for j in range(n0):
            a[j] = 0.0 if crashed[uo[0] + j] else x[j]
        for l in range(acts.shape[0]):
            nin = dims[l]
            nout = dims[l + 1]
            w0 = wo[l]
            for i in range(nout):
                acc = bf[bo[l] + i]
                row = w0 + i * nin
                for j in range(nin):
                    acc += wf[row + j] * a[j]
                if crashed[uo[l + 1] + i]:
                    b[i] = 0.0
                else:
                    b[i] = _act_nb(acc, acts[l])
            for i in range(nout):
                a[i] = b[i]
        for i in range(dims[dims.shape[0] - 1]):
            out_row[i] = a[i]

    @njit(cache=True, nogil=True)
    def mask_forward_nb(wf, wo, bf, bo, dims, acts, uo, X, xidx, masks, out):
        width = dims.max()
        a = np.empty(width)
        b = np.empty(width)
        for s in range(xidx.shape[0]):
            _forward_one(wf, wo, bf, bo, dims, acts, uo, X[xidx[s]], masks[s], a, b, out[s])

    @njit(cache=True, nogil=True)
    def mc_forward_nb(wf, wo, bf, bo, dims, acts, uo, X, xidx, p_units, seed_u, stream0, out):
        width = dims.max()
        a = np.empty(width)
        b = np.empty(width)
        nunits = p_units.shape[0]
        crashed = np.zeros(nunits, dtype=np.bool_)
        base = _mix64_nb(seed_u + GOLDEN)
        for s in range(xidx.shape[0]):
            key = _stream_key_nb(base, stream0 + s)
            for j in range(nunits):
                pj = p_units[j]
                if pj <= 0.0:
                    crashed[j] = False
                elif pj >= 1.0:
                    crashed[j] = True
                else:
                    crashed[j] = _uniform_nb(key, j) < pj
            _forward_one(wf, wo, bf, bo, dims, acts, uo, X[xidx[s]], crashed, a, b, out[s])


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

def uniforms(seed, streams, counters):
    streams = np.ascontiguousarray(streams, dtype=np.uint64)
    counters = np.ascontiguousarray(counters, dtype=np.uint64)
    if _backend == "numba":
        return uniforms_nb(np.uint64(seed & 0xFFFFFFFFFFFFFFFF), streams, counters)
    return uniforms_np(seed, streams, counters)


def mask_forward(packed, X, xidx, masks, out):
    if _backend == "numba":
        mask_forward_nb(*packed, X, xidx, masks, out)
    else:
        mask_forward_np(*packed, X, xidx, masks, out)


def mc_forward(packed, X, xidx, p_units, seed, stream0, out):
    if _backend == "numba":
        mc_forward_nb(*packed, X, xidx, p_units, np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
                      np.uint64(stream0), out)
    else:
        mc_forward_np(*packed, X, xidx, p_units, seed, np.uint64(stream0), out)


def pack(weights, biases, act_codes):
    """Flatten a layer list into the array tuple the kernels consume."""
    dims = [weights[0].shape[1]] + [W.shape[0] for W in weights]
    wo = np.cumsum([0] + [W.size for W in weights[:-1]]).astype(np.int64)
    bo = np.cumsum([0] + [b.size for b in biases[:-1]]).astype(np.int64)
    uo = np.cumsum([0] + dims[:-1]).astype(np.int64)
    wf = np.concatenate([np.ascontiguousarray(W, dtype=np.float64).ravel() for W in weights])
    bf = np.concatenate([np.asarray(b, dtype=np.float64).ravel() for b in biases])
    return (wf, wo, bf, bo, np.asarray(dims, dtype=np.int64),
            np.asarray(act_codes, dtype=np.int64), uo)
