import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crashcert import CrashModel, make_network
from crashcert.guarantees import (InfeasibleError, chebyshev_certificate, majority_failure, median_repetitions,
                                  network_delta0, perturbation_tail_delta0, q_factor)


def test_delta0_reference():
    # exp(-100 * 0.1444797)
    assert perturbation_tail_delta0(100, 1.0, 0.1, 0.01) == pytest.approx(5.313e-7, rel=1e-3)


def test_delta0_domain():
    with pytest.raises(ValueError):
        perturbation_tail_delta0(100, 1.0, 0.01, 0.1)
    with pytest.raises(ValueError):
        perturbation_tail_delta0(100, 0.0, 0.1, 0.01)


def test_q_factor():
    assert q_factor(np.array([[1.0, -1.0], [4.0, 0.0]])) == 0.5
    assert q_factor(np.array([[1.0], [2.0], [-4.0]])) == 0.25
    assert q_factor(np.array([[0.0, 0.0], [1.0, 1.0]])) == 0.0
    with pytest.raises(ValueError):
        q_factor(np.zeros((2, 2)))


def test_network_delta0_trivial_when_alpha_reaches_one():
    net = make_network([3, 4, 1], "sigmoid", seed=0)
    d0, per = network_delta0(net, CrashModel((0.0, 0.2, 0.0)))
    assert d0 == 1.0 and per[0]["alpha"] >= 1.0


def test_chebyshev():
    c = chebyshev_certificate(0.01, 0.0004, 0.05)
    assert c.delta == pytest.approx(0.0004 / 0.04 ** 2)
    c = chebyshev_certificate(0.01, 0.0004, 0.05, delta0=0.1)
    assert c.delta == pytest.approx(0.1 + 0.25)
    with pytest.raises(InfeasibleError):
        chebyshev_certificate(0.06, 0.0, 0.05)


def test_median_repetitions_reference():
    assert median_repetitions(1 / 3, 1e-5) == 21
    # 2 ln(1e10) / ln 3 = 41.9 -> 42 -> next odd
    assert median_repetitions(1 / 3, 1e-10) == 43
    assert median_repetitions(1 / 3, 1 / 3) == 1
    assert median_repetitions(0.01, 0.1) == 1
    with pytest.raises(ValueError):
        median_repetitions(0.4, 1e-3)


@given(st.floats(0.01, 1 / 3), st.floats(1e-9, 0.5))
def test_power_rule_is_smallest_odd(base, target):
    R = median_repetitions(base, target)
    assert R % 2 == 1
    if R > 1:
        assert base ** (R / 2) <= target * (1 + 1e-12)
        assert base ** ((R - 2) / 2) > target


def test_majority_failure_by_hand():
    d = 0.3
    for R in (1, 3, 5, 9):
        want = sum(math.comb(R, k) * d ** k * (1 - d) ** (R - k) for k in range((R + 1) // 2, R + 1))
        assert majority_failure(d, R) == pytest.approx(want, rel=1e-12)


def test_exact_rule_is_more_conservative_near_one_third():
    # the majority tail exceeds base^(R/2) here, so the exact rule asks for more replicas
    assert majority_failure(1 / 3, 21) > (1 / 3) ** 10.5
    assert median_repetitions(1 / 3, 1e-5, "exact") > 21
