"""Crash-fault tolerance analysis and certification for small feed-forward networks."""
__version__ = "0.1.0"

from ._kernels import backend, set_backend  # noqa: E402
from .core_math import RngStream, kl_bernoulli, matrix_norm, rng_draw  # noqa: E402
from .network import Head, Layer, LossSpec, Network, delta, forward, forward_crashed, loss, make_network  # noqa: E402
from .fault_injection import CrashModel, ErrorMoments, exact_moments, monte_carlo_moments  # noqa: E402

__all__ = ["backend", "set_backend", "RngStream", "kl_bernoulli", "matrix_norm", "rng_draw", "Head", "Layer",
           "LossSpec", "Network", "delta", "forward", "forward_crashed", "loss", "make_network", "CrashModel",
           "ErrorMoments", "exact_moments", "monte_carlo_moments"]
