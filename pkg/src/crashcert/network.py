"""Feed-forward network model, clean and crashed evaluation, bounded losses.

Layer l (1-based) computes z_l = W_l y_{l-1} + b_l and y_l = act(z_l), with
y_0 = x.  A crash mask is a list of L+1 boolean vectors; entry l marks the
neurons of y_l that are stuck at 0 (entry 0 marks input coordinates).
Everything is batched internally: x may be a vector or a (batch, n0) array.
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.special import expit

from . import _kernels

ACTIVATIONS = {"linear": _kernels.ACT_LINEAR, "sigmoid": _kernels.ACT_SIGMOID, "relu": _kernels.ACT_RELU}


def activate(z, kind):
    if kind == "sigmoid":
        return expit(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def activate_deriv(z, kind):
    if kind == "sigmoid":
        s = expit(z)
        return s * (1.0 - s)
    if kind == "relu":
        # subgradient 0 at exactly 0
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def activate_deriv2(z, kind):
    if kind == "sigmoid":
        s = expit(z)
        return s * (1.0 - s) * (1.0 - 2.0 * s)
    return np.zeros_like(z)


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "sigmoid"

    def __post_init__(self):
        W = np.array(self.weights, dtype=np.float64, ndmin=2)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if W.ndim != 2:
            raise ValueError("weights must be a matrix")
        if b.shape[0] != W.shape[0]:
            raise ValueError(f"bias length {b.shape[0]} != weight rows {W.shape[0]}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("weights and biases must be finite")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class Network:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k].weights.shape[1] != layers[k - 1].weights.shape[0]:
                raise ValueError(
                    f"layer {k + 1} expects {layers[k].weights.shape[1]} inputs, "
                    f"layer {k} has {layers[k - 1].weights.shape[0]} outputs")
        if layers[-1].activation != "linear":
            raise ValueError("the last layer must be linear")
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self):
        return len(self.layers)

    @property
    def widths(self):
        """[n0, n1, ..., nL]."""
        return [self.layers[0].weights.shape[1]] + [ly.weights.shape[0] for ly in self.layers]

    @property
    def weights(self):
        return [ly.weights for ly in self.layers]

    @property
    def biases(self):
        return [ly.bias for ly in self.layers]

    @property
    def activations(self):
        return [ly.activation for ly in self.layers]

    @cached_property
    def packed(self):
        return _kernels.pack(self.weights, self.biases, [ACTIVATIONS[a] for a in self.activations])

    def is_smooth(self, start=0):
        """True when no layer after index `start` uses relu."""
        return all(a != "relu" for a in self.activations[start:])

    def replace_weights(self, weights, biases):
        return Network(tuple(Layer(W, b, ly.activation) for W, b, ly in zip(weights, biases, self.layers)))


def make_network(widths, activation="sigmoid", seed=0, scale=1.0, init="normal"):
    """Random network with widths [n0, ..., nL]; last layer linear.

    init="normal" draws W ~ N(0, scale^2/n_in).  init="continuous" samples
    each W_l from a smooth random function of (row, column) position,
    divided by n_in, so that wider layers approximate the same continuous
    limit and neighbouring neurons compute similar functions.
    """
    rng = np.random.default_rng(seed)
    layers = []
    L = len(widths) - 1
    for l in range(L):
        nin, nout = widths[l], widths[l + 1]
        if init == "normal":
            W = rng.normal(0.0, scale / np.sqrt(nin), size=(nout, nin))
            b = np.zeros(nout)
        elif init == "continuous":
            W = _smooth_field(rng, nout, nin) * scale * 4.0 / nin
            b = _smooth_field(rng, nout, 1)[:, 0] * 0.5
        else:
            raise ValueError(f"unknown init {init!r}")
        layers.append(Layer(W, b, "linear" if l == L - 1 else activation))
    return Network(tuple(layers))


def _smooth_field(rng, rows, cols, modes=3):
    # low-frequency random Fourier series sampled on a grid in [0,1]^2
    u = (np.arange(rows) + 0.5) / rows
    v = (np.arange(cols) + 0.5) / cols
    out = np.zeros((rows, cols))
    for a in range(modes):
        for c in range(modes):
            amp = rng.normal() / (1.0 + a + c)
            ph1, ph2 = rng.uniform(0, 2 * np.pi, size=2)
            out += amp * np.outer(np.cos(np.pi * a * u + ph1), np.cos(np.pi * c * v + ph2))
    return out


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class ForwardTrace:
    """Pre-activations z[1..L] (z[0] is None) and activations y[0..L].

    y holds the values actually passed on, so crashed entries are 0.  mult
    is the per-layer output multiplier used (None for the clean pass).
    """
    z: list
    y: list
    mult: Optional[list] = None

    @property
    def output(self):
        return self.y[-1]


def forward_batch(net, X, mult=None):
    """Forward pass on a batch with optional per-layer output multipliers.

    mult[l] (broadcastable to y_l) scales y_l after the activation, so a
    crash is a multiplier of 0.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != net.widths[0]:
        raise ValueError(f"input has {X.shape[1]} features, network expects {net.widths[0]}")
    y0 = X if mult is None or mult[0] is None else X * mult[0]
    zs, ys = [None], [y0]
    for l, ly in enumerate(net.layers, start=1):
        z = ys[-1] @ ly.weights.T + ly.bias
        y = activate(z, ly.activation)
        if mult is not None and mult[l] is not None:
            y = y * mult[l]
        zs.append(z)
        ys.append(y)
    return ForwardTrace(zs, ys, mult)


def _check_mask(net, mask):
    widths = net.widths
    if len(mask) != len(widths):
        raise ValueError(f"mask has {len(mask)} layers, network has {len(widths)} (input included)")
    out = []
    for l, (m, n) in enumerate(zip(mask, widths)):
        m = np.asarray(m, dtype=bool)
        if m.shape[-1] != n:
            raise ValueError(f"mask layer {l} has width {m.shape[-1]}, expected {n}")
        out.append(m)
    return out


def mask_to_mult(net, mask):
    return [np.where(m, 0.0, 1.0) for m in _check_mask(net, mask)]


def forward(net, x):
    return forward_batch(net, np.atleast_2d(x)) if np.ndim(x) == 2 else _squeeze(forward_batch(net, x))


def forward_crashed(net, x, mask):
    tr = forward_batch(net, np.atleast_2d(x), mask_to_mult(net, mask))
    return tr if np.ndim(x) == 2 else _squeeze(tr)


def _squeeze(tr):
    return ForwardTrace([None if z is None else z[0] for z in tr.z], [y[0] for y in tr.y],
                        None if tr.mult is None else [np.asarray(m).reshape(-1) for m in tr.mult])


def empty_mask(net):
    return [np.zeros(n, dtype=bool) for n in net.widths]


def full_mask(net):
    return [np.ones(n, dtype=bool) for n in net.widths]


# ---------------------------------------------------------------------------
# losses and heads
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossSpec:
    """Bounded loss.  `target` is a vector (mse) or a class index (margin).

    For dataset use the target may be left None and supplied per example.
    """
    kind: str = "bounded_mse"
    target: object = None
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("bounded_mse", "bounded_margin"):
            raise ValueError(f"unknown loss kind {self.kind!r}")


def _targets(spec, T, batch, width):
    if T is None:
        if spec.target is None:
            raise ValueError("loss needs a target")
        T = spec.target
    if spec.kind == "bounded_margin":
        T = np.asarray(T)
        if T.ndim == 2:
            T = T.argmax(axis=1)
        T = np.broadcast_to(np.asarray(T, dtype=np.int64).reshape(-1), (batch,))
        if np.any(T < 0) or np.any(T >= width):
            raise ValueError(f"class index out of range for {width} outputs")
        return T
    T = np.asarray(T, dtype=np.float64)
    return np.broadcast_to(T.reshape(-1, width) if T.ndim <= 2 else T, (batch, width))


def loss_batch(out, spec, T=None):
    """Per-example bounded loss and its gradient with respect to the output."""
    out = np.atleast_2d(out)
    B, k = out.shape
    T = _targets(spec, T, B, k)
    if spec.kind == "bounded_mse":
        d = out - T
        raw = np.mean(d * d, axis=1)
        val = np.clip(raw, 0.0, 1.0)
        grad = (2.0 / k) * d * (raw <= 1.0)[:, None]
        return val, grad
    rows = np.arange(B)
    true = out[rows, T]
    wrong = out.copy()
    wrong[rows, T] = -np.inf
    j = np.argmax(wrong, axis=1)
    raw = spec.scale * (wrong[rows, j] - true)
    val = np.clip(raw, -1.0, 1.0)
    grad = np.zeros_like(out)
    inside = np.abs(raw) <= 1.0
    grad[rows, j] += spec.scale * inside
    grad[rows, T] -= spec.scale * inside
    return val, grad


def loss(output, spec, target=None):
    v, _ = loss_batch(np.atleast_2d(output), spec, target)
    return float(v[0]) if np.ndim(output) == 1 else v


def margin_scale(net, X):
    """Scale that keeps the margin loss inside [-1, 1] on the given inputs."""
    out = forward_batch(net, X).output
    return 1.0 / (1.0 + float(np.max(out.max(axis=1) - out.min(axis=1))))


@dataclass(frozen=True)
class Head:
    """A scalar read-out of the network: sign * output[index], or a loss."""
    kind: str = "output"
    index: int = 0
    sign: float = 1.0
    loss: Optional[LossSpec] = None

    @staticmethod
    def output(index=0, sign=1.0):
        return Head("output", index, sign)

    @staticmethod
    def of_loss(spec):
        return Head("loss", loss=spec)

    def value_grad(self, out, T=None):
        out = np.atleast_2d(out)
        if self.kind == "loss":
            return loss_batch(out, self.loss, T)
        if not 0 <= self.index < out.shape[1]:
            raise ValueError(f"output index {self.index} out of range")
        g = np.zeros_like(out)
        g[:, self.index] = self.sign
        return self.sign * out[:, self.index], g

    def value(self, out, T=None):
        out = np.atleast_2d(out)
        if self.kind == "loss":
            return loss_batch(out, self.loss, T)[0]
        return self.sign * out[:, self.index]


def as_head(head):
    if head is None:
        return Head.output(0)
    if isinstance(head, Head):
        return head
    if isinstance(head, LossSpec):
        return Head.of_loss(head)
    if isinstance(head, (int, np.integer)):
        return Head.output(int(head))
    raise TypeError(f"cannot interpret {head!r} as a head")


def delta(net, x, mask, at="output", target=None):
    """Crashed minus clean value at the output (vector) or at a loss/head."""
    x2 = np.atleast_2d(x)
    clean = forward_batch(net, x2).output
    bad = forward_batch(net, x2, mask_to_mult(net, mask)).output
    if isinstance(at, str) and at == "output":
        d = bad - clean
    else:
        h = as_head(at)
        d = h.value(bad, target) - h.value(clean, target)
    return d[0] if np.ndim(x) == 1 else d
