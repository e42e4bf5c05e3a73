import numpy as np
import pytest

from crashcert import Layer, Network, make_network


def averaging_net(n):
    """y = mean(x): one linear layer with weights 1/n."""
    return Network([Layer(np.full((1, n), 1.0 / n), np.zeros(1), "linear")])


def identity_net():
    """y = x1 on a single input."""
    return Network([Layer(np.ones((1, 1)), np.zeros(1), "linear")])


@pytest.fixture
def avg4():
    return averaging_net(4)


@pytest.fixture
def small_sigmoid():
    return make_network([3, 4, 3, 1], "sigmoid", seed=3, scale=2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mods = [m for name, m in sys.modules.items() if name.endswith("test_acceptance")]
    results = getattr(mods[0], "RESULTS", {}) if mods else {}
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
