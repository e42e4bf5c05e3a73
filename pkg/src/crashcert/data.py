"""Datasets, synthetic generators, model/dataset files and JSON reports."""
import csv
import datetime as _dt
import json
import math
from dataclasses import dataclass

import numpy as np

from . import __version__, _kernels
from .network import Layer, Network

SCHEMA_VERSION = "1.0"


class SchemaError(ValueError):
    """A file was readable but its contents violate the expected layout."""


@dataclass
class Dataset:
    """Inputs X (N, d) and float targets Y (N, k); one-hot rows for classes."""
    X: np.ndarray
    Y: np.ndarray
    task: str = "regression"
    name: str = ""

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        Y = np.asarray(self.Y, dtype=np.float64)
        self.Y = Y.reshape(-1, 1) if Y.ndim == 1 else Y
        if self.X.shape[0] != self.Y.shape[0]:
            raise SchemaError(f"{self.X.shape[0]} inputs but {self.Y.shape[0]} targets")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise SchemaError("dataset contains non-finite values")

    def __len__(self):
        return self.X.shape[0]

    @property
    def labels(self):
        return self.Y.argmax(axis=1)

    def subset(self, idx):
        return Dataset(self.X[idx], self.Y[idx], self.task, self.name)

    def split(self, frac, seed=0):
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(self))
        k = int(round(frac * len(self)))
        return self.subset(np.sort(perm[:k])), self.subset(np.sort(perm[k:]))


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def synth_dataset(kind, n_samples=256, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    if kind == "smooth-1d":
        X = rng.uniform(-1.0, 1.0, size=(n_samples, 1))
        Y = 0.5 * np.sin(np.pi * X) + noise * rng.normal(size=X.shape)
        return Dataset(X, Y, "regression", kind)
    if kind == "smooth-2d":
        X = rng.uniform(-1.0, 1.0, size=(n_samples, 2))
        y = 0.4 * np.sin(np.pi * X[:, 0]) * np.cos(0.5 * np.pi * X[:, 1]) + 0.2 * X[:, 1]
        return Dataset(X, y[:, None] + noise * rng.normal(size=(n_samples, 1)), "regression", kind)
    if kind == "blobs":
        k = 3
        centers = np.array([[np.cos(2 * np.pi * c / k), np.sin(2 * np.pi * c / k)] for c in range(k)])
        lab = rng.integers(0, k, size=n_samples)
        X = centers[lab] * 0.8 + (0.25 + noise) * rng.normal(size=(n_samples, 2))
        return Dataset(X, np.eye(k)[lab], "classification", kind)
    if kind == "digits":
        from sklearn.datasets import load_digits
        d = load_digits()
        idx = rng.permutation(d.data.shape[0])[:n_samples]
        X = d.data[idx] / 16.0
        if noise > 0:
            X = X + noise * rng.normal(size=X.shape)
        return Dataset(X, np.eye(10)[d.target[idx]], "classification", kind)
    raise ValueError(f"unknown synthetic dataset {kind!r}")


def parse_synth_spec(text):
    """'synth:KIND,n_samples=N,noise=S,seed=K' -> keyword dict."""
    body = text[len("synth:"):] if text.startswith("synth:") else text
    parts = [s.strip() for s in body.split(",") if s.strip()]
    if not parts:
        raise SchemaError("empty synthetic dataset spec")
    out = {"kind": parts[0]}
    for p in parts[1:]:
        if "=" not in p:
            raise SchemaError(f"bad synthetic spec field {p!r}; expected key=value")
        k, v = p.split("=", 1)
        if k == "n_samples" or k == "seed":
            out[k] = int(v)
        elif k == "noise":
            out[k] = float(v)
        else:
            raise SchemaError(f"unknown synthetic spec field {k!r}")
    return out


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def read_dataset(path):
    """CSV with header; columns named target* are targets, else the last column."""
    if str(path).startswith("synth:"):
        return synth_dataset(**parse_synth_spec(str(path)))
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    data = []
    for i, r in enumerate(rows[1:], start=2):
        if not r or all(not c.strip() for c in r):
            continue
        if len(r) != len(header):
            raise SchemaError(f"{path}: line {i} has {len(r)} fields, header has {len(header)}")
        try:
            data.append([float(c) for c in r])
        except ValueError as e:
            raise SchemaError(f"{path}: line {i}: {e}") from None
    if not data:
        raise SchemaError(f"{path}: no data rows")
    A = np.array(data)
    tcols = [j for j, h in enumerate(header) if h.lower().startswith("target")]
    if not tcols:
        tcols = [len(header) - 1]
    fcols = [j for j in range(len(header)) if j not in tcols]
    return Dataset(A[:, fcols], A[:, tcols], "regression", str(path))


def write_dataset(ds, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(ds.X.shape[1])] + [f"target{j}" for j in range(ds.Y.shape[1])])
        for x, y in zip(ds.X, ds.Y):
            w.writerow([_fmt(v) for v in x] + [_fmt(v) for v in y])


def _fmt(v):
    return format(float(v), ".17g")


class _Exact(float):
    def __repr__(self):
        return _fmt(self)


def _exactify(obj):
    if isinstance(obj, dict):
        return {k: _exactify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_exactify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _exactify(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if not math.isfinite(f) else _Exact(f)
    return obj


def _dumps(obj):
    # small hand encoder so every float is written with 17 significant digits
    return _encode(_exactify(obj), 0)


def _encode(o, depth):
    pad = " " * depth
    if isinstance(o, dict):
        if not o:
            return "{}"
        items = [f'{pad} {json.dumps(str(k))}: {_encode(v, depth + 1)}' for k, v in o.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(o, list):
        if all(not isinstance(v, (dict, list)) for v in o):
            return "[" + ", ".join(_encode(v, depth + 1) for v in o) + "]"
        return "[\n" + ",\n".join(pad + " " + _encode(v, depth + 1) for v in o) + "\n" + pad + "]"
    if isinstance(o, _Exact):
        return repr(o)
    if isinstance(o, float):
        return "NaN" if math.isnan(o) else ("Infinity" if o > 0 else "-Infinity")
    return json.dumps(o)


def model_to_dict(net, meta=None):
    return {"layers": [{"weights": ly.weights, "bias": ly.bias, "activation": ly.activation} for ly in net.layers],
            "meta": meta or {}}


def write_model(net, path, meta=None):
    with open(path, "w") as fh:
        fh.write(_dumps(model_to_dict(net, meta)) + "\n")


def model_from_dict(doc, where="model"):
    if not isinstance(doc, dict) or "layers" not in doc:
        raise SchemaError(f"{where}: missing 'layers'")
    layers = []
    for i, ly in enumerate(doc["layers"]):
        for key in ("weights", "bias", "activation"):
            if key not in ly:
                raise SchemaError(f"{where}: layers[{i}] missing field '{key}'")
        W = ly["weights"]
        if not isinstance(W, list) or not W or any(not isinstance(r, list) or len(r) != len(W[0]) for r in W):
            raise SchemaError(f"{where}: layers[{i}].weights is not a rectangular matrix")
        try:
            layers.append(Layer(np.array(W, dtype=np.float64), np.array(ly["bias"], dtype=np.float64),
                                ly["activation"]))
        except ValueError as e:
            raise SchemaError(f"{where}: layers[{i}]: {e}") from None
    try:
        return Network(tuple(layers))
    except ValueError as e:
        raise SchemaError(f"{where}: {e}") from None


def read_model(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    return model_from_dict(doc, str(path))


def make_report(command, argv, config, results, seed=None):
    return {"schema_version": SCHEMA_VERSION, "command": command, "argv": list(argv), "config": config,
            "results": results,
            "provenance": {"seed": seed, "version": __version__, "backend": _kernels.backend(),
                           "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat()}}


def write_report(report, path):
    with open(path, "w") as fh:
        fh.write(_dumps(report) + "\n")


def dumps(obj):
    return _dumps(obj)
