"""Numba vs numpy timing for the crash-injection kernels.

Run:  python3 benchmarks/bench_kernels.py [--samples 200000] [--repeats 3]

Both backends draw the same counter-based uniforms, so crash masks agree bit
for bit; outputs differ only by summation order (BLAS vs loops), printed below.
"""
import argparse
import time

import numpy as np

from crashcert import _kernels
from crashcert.network import make_network


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run(samples, repeats, widths):
    net = make_network(widths, "sigmoid", seed=0)
    packed = net.packed
    units = sum(net.widths)
    p_units = np.full(units, 0.05)
    p_units[-net.widths[-1]:] = 0.0
    X = np.random.default_rng(0).uniform(-1, 1, (64, net.widths[0]))
    xidx = np.arange(samples, dtype=np.int64) % X.shape[0]
    streams = np.arange(samples, dtype=np.uint64)
    ctrs = np.arange(units, dtype=np.uint64)

    rows, outs = [], {}
    for name in ("numpy", "numba"):
        if name == "numba" and not _kernels.HAVE_NUMBA:
            print("numba not installed, skipping")
            continue
        _kernels.set_backend(name)
        out = np.empty((samples, net.widths[-1]))
        # warm-up compiles the jitted kernels
        _kernels.mc_forward(packed, X, xidx[:16], p_units, 1, 0, out[:16])
        _kernels.uniforms(1, streams[:4], ctrs)
        t_mc = _time(lambda: _kernels.mc_forward(packed, X, xidx, p_units, 1, 0, out), repeats)
        t_u = _time(lambda: _kernels.uniforms(1, streams, ctrs), repeats)
        outs[name] = out.copy()
        rows.append((name, t_mc, t_u))
    _kernels.set_backend("numba" if _kernels.HAVE_NUMBA else "numpy")

    print(f"net {widths}, {samples} crashed forward passes, best of {repeats}")
    print(f"{'backend':8s} {'mc_forward [s]':>15s} {'uniforms [s]':>13s}")
    for name, a, b in rows:
        print(f"{name:8s} {a:15.4f} {b:13.4f}")
    if len(rows) == 2:
        print(f"speed-up  {rows[0][1] / rows[1][1]:14.1f}x {rows[0][2] / rows[1][2]:12.1f}x")
        print(f"max |numpy - numba| output difference: {np.abs(outs['numpy'] - outs['numba']).max():.2e}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=200_000)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--widths", default="16,64,64,1")
    a = ap.parse_args()
    run(a.samples, a.repeats, [int(v) for v in a.widths.split(",")])


if __name__ == "__main__":
    main()
