"""Mini-batch SGD on the regularized objective, optional unscaled dropout."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .network import Head, LossSpec, as_head
from .regularizer import RegWeights, regularized_loss, regularized_value

DROPOUT_SALT = 0x5EED_D809


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.1
    reg: RegWeights = field(default_factory=RegWeights)
    dropout_p_train: Optional[tuple] = None  # per layer 0..L
    seed: int = 0
    # "fan_in": step / n_in per layer; "mean_field": step * n_out / n_in, which
    # keeps updates of width-normalised weights O(1) as layers widen
    lr_scaling: str = "none"

    def __post_init__(self):
        if self.lr_scaling not in ("none", "fan_in", "mean_field"):
            raise ValueError(f"unknown lr scaling {self.lr_scaling!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.dropout_p_train is not None and any(not 0.0 <= v <= 1.0 for v in self.dropout_p_train):
            raise ValueError("dropout probabilities must lie in [0, 1]")


@dataclass
class TrainResult:
    net: object
    history: list
    best_epoch: int
    parts: dict = field(default_factory=dict)


def _head_for(spec):
    if spec is None:
        return Head.of_loss(LossSpec("bounded_mse"))
    if isinstance(spec, LossSpec):
        return Head.of_loss(spec)
    return as_head(spec)


def _dropout_mult(net, p_units, seed, step, batch):
    # per-sample streams: step * 2^20 + row keeps streams of different steps apart
    streams = np.uint64(step) * np.uint64(1 << 20) + np.arange(batch, dtype=np.uint64)
    u = _kernels.uniforms(seed ^ DROPOUT_SALT, streams, np.arange(p_units.size, dtype=np.uint64))
    keep = (u >= p_units).astype(np.float64)
    out, k = [], 0
    for n in net.widths:
        out.append(keep[:, k:k + n])
        k += n
    return out


def train(net, dataset, cfg, spec=None):
    """Plain SGD; returns the checkpoint with the lowest full-data objective."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    head = _head_for(spec)
    X, T = dataset.X, dataset.Y
    N = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    Ws = [W.copy() for W in net.weights]
    bs = [b.copy() for b in net.biases]
    p_units = None
    if cfg.dropout_p_train is not None and any(v > 0 for v in cfg.dropout_p_train):
        p = list(cfg.dropout_p_train)
        if len(p) != net.depth + 1:
            raise ValueError(f"dropout needs {net.depth + 1} per-layer probabilities, got {len(p)}")
        p_units = np.concatenate([np.full(n, v) for n, v in zip(net.widths, p)])

    if cfg.lr_scaling == "fan_in":
        rates = [cfg.learning_rate / W.shape[1] for W in Ws]
    elif cfg.lr_scaling == "mean_field":
        rates = [cfg.learning_rate * W.shape[0] / W.shape[1] for W in Ws]
    else:
        rates = [cfg.learning_rate] * len(Ws)

    cur = net
    best = cur
    best_val = regularized_value(cur, X, T, head, cfg.reg)
    history = [best_val]
    best_epoch = 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(N)
        for s in range(0, N, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            mult = None if p_units is None else _dropout_mult(cur, p_units, cfg.seed, step, idx.size)
            _, dW, db, _ = regularized_loss(cur, X[idx], T[idx], head, cfg.reg, mult)
            for k in range(len(Ws)):
                Ws[k] -= rates[k] * dW[k]
                bs[k] -= rates[k] * db[k]
            if not all(np.all(np.isfinite(W)) for W in Ws):
                raise TrainingDivergedError(f"weights became non-finite at epoch {epoch}, step {step}; "
                                            "lower the learning rate")
            cur = net.replace_weights(Ws, bs)
            step += 1
        val = regularized_value(cur, X, T, head, cfg.reg)
        if not np.isfinite(val):
            raise TrainingDivergedError(f"objective became non-finite at epoch {epoch}")
        history.append(val)
        if val < best_val:
            best, best_val, best_epoch = cur, val, epoch
    return TrainResult(best, history, best_epoch)


def train_with_dropout(net, dataset, cfg, spec=None):
    """Training with unscaled dropout: crashed units output 0, survivors are not rescaled."""
    if cfg.dropout_p_train is None:
        raise ValueError("train_with_dropout needs dropout_p_train")
    return train(net, dataset, cfg, spec)


def rank_loss(scores, reference):
    """Share of discordant pairs, ties in scores counting half, over n^2.

    With this normalisation a reversed order approaches 0.5 and random
    scores give about 0.25.
    """
    s = np.asarray(scores, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if s.shape != r.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {r.shape}")
    n = s.size
    if n < 2:
        raise ValueError("need at least two items")
    i, j = np.triu_indices(n, 1)
    ds = np.sign(s[i] - s[j])
    dr = np.sign(r[i] - r[j])
    valid = dr != 0
    bad = np.sum((ds * dr < 0) & valid) + 0.5 * np.sum((ds == 0) & valid)
    return float(bad / (n * n))
