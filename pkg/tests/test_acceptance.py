"""Acceptance criteria at full size and stated tolerances.

Each test prints one PASS/FAIL line; the lines are collected again in the
terminal summary.
"""

import pytest

from fedswitch.checks import CHECKS

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.acceptance


def _run(number):
    result = CHECKS[number](quick=False)
    line = result.line()
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert result.passed, line


def test_full_bandwidth_allocation():
    _run(1)


def test_risk_gap_bound_dominance():
    _run(2)


def test_success_probability_vs_monte_carlo():
    _run(3)


def test_lambert_w_accuracy():
    _run(4)


def test_power_gradient_vs_finite_differences():
    _run(5)


def test_switching_lp_exactness():
    _run(6)


def test_switching_strategy_ordering():
    _run(7)


def test_power_control_energy_saving():
    _run(8)


def test_iteration_growth_per_halving():
    _run(9)


def test_degenerate_gradient_descent():
    _run(10)


def test_determinism():
    _run(11)
