import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedswitch.bound import SmoothnessConstants
from fedswitch.switching import (SwitchState, dual_update, primal_step, round_beta, switching_cost,
                                 switching_gradient)

C = SmoothnessConstants(2.0, 0.5, 0.3, 0.05)


def test_cost_at_extremes():
    B = np.array([0.4, 1.1, 0.2])
    lam = np.array([0.9, 0.5, 0.7])
    E = np.array([1.0, 2.0, 3.0])
    assert switching_cost(np.ones(3), B, lam, C, 0.2, E) == pytest.approx(0.2 * 6.0)
    expect = (16 * 0.5 * 0.05 / 2.0) * np.sum(B * (1 - lam)) + (4 * 0.3 / 2.0) * np.sum(1 - lam)
    assert switching_cost(np.zeros(3), B, lam, C, 7.0, E) == pytest.approx(expect, rel=1e-14)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    B, lam, E = rng.random(4), rng.random(4), rng.random(4)
    beta = rng.random(4) * 0.25
    g = switching_gradient(B, lam, C, 0.3, E)
    h = 1e-6
    for n in range(4):
        e = np.zeros(4)
        e[n] = h
        fd = (switching_cost(beta + e, B, lam, C, 0.3, E) - switching_cost(beta - e, B, lam, C, 0.3, E)) / (2 * h)
        assert g[n] == pytest.approx(fd, rel=1e-7)
    expect = -(16 * 0.5 * 0.05 / 2.0) * B * (1 - lam) - (4 * 0.3 / 2.0) * (1 - lam) + 0.3 * E
    np.testing.assert_allclose(g, expect, rtol=1e-14)


def state(beta_hat, v=0.1, s_t=1, varsigma=1.0, dual=None):
    return SwitchState(np.asarray(beta_hat, dtype=float), v, s_t, varsigma, dual)


def test_dual_examples():
    assert dual_update(state([1.0]), [0.1 - 1.0])[0] == 0.0
    assert dual_update(state([0.0]), [0.1 - 0.0])[0] == pytest.approx(0.1)
    s = state([0.1, 0.1], s_t=2, dual=[0.3, 0.0])
    np.testing.assert_array_equal(dual_update(s, s.v - s.beta_hat), [0.3, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.lists(st.floats(0, 10), min_size=6, max_size=6),
       st.floats(0.01, 3.0))
def test_dual_stays_nonnegative(z, dual, step):
    n = len(z)
    s = SwitchState(np.zeros(n), 0.1, 1, step, np.asarray(dual[:n]))
    assert np.all(dual_update(s, z) >= 0)


def test_primal_examples():
    c = np.array([-3.0, -1.0, 2.0])
    np.testing.assert_array_equal(primal_step(state(np.zeros(3)), c, np.zeros(3)), [1, 0, 0])
    np.testing.assert_array_equal(primal_step(state(np.zeros(3), s_t=2), c, np.zeros(3)), [1, 1, 0])
    np.testing.assert_array_equal(primal_step(state(np.zeros(3)), [1.0, 0.5, 2.0], np.zeros(3)), [0, 0, 0])
    # zero coefficient does not subscribe; ties go to the lower index
    np.testing.assert_array_equal(primal_step(state(np.zeros(2)), [1.0, 1.0], [1.0, 1.0]), [0, 0])
    np.testing.assert_array_equal(primal_step(state(np.zeros(3)), [-1.0, -2.0, -2.0], np.zeros(3)), [0, 1, 0])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-5, 5), min_size=n, max_size=n), st.lists(st.floats(0, 3), min_size=n, max_size=n),
    st.integers(1, n))))
def test_primal_matches_enumeration(case):
    grad, dual, s_t = case
    n = len(grad)
    coef = np.asarray(grad) - np.asarray(dual)
    beta = primal_step(state(np.zeros(n), s_t=s_t), grad, dual)
    assert set(np.unique(beta)) <= {0.0, 1.0} and beta.sum() <= s_t
    best = min(float(coef @ np.array(b)) for b in itertools.product((0, 1), repeat=n) if sum(b) <= s_t)
    assert float(coef @ beta) == pytest.approx(best, abs=1e-12)


def test_round_beta_integral_fixed_point():
    rng = np.random.default_rng(0)
    for b in ([0, 1, 0, 0], [0, 0, 0, 0], [1, 0, 1, 0]):
        out = round_beta(np.array(b, dtype=float), 2, rng)
        np.testing.assert_array_equal(out, b)


def test_round_beta_single_cap_marginals():
    rng = np.random.default_rng(1)
    M = 100_000
    draws = np.array([round_beta([0.5, 0.5, 0.0, 0.0], 1, rng) for _ in range(M)])
    assert draws.sum(axis=1).max() == 1
    tol = 3 * np.sqrt(0.25 / M)
    assert abs(draws[:, 0].mean() - 0.5) <= tol
    assert abs(draws[:, 1].mean() - 0.5) <= tol
    assert draws[:, 2:].sum() == 0


def test_round_beta_leftover_mass_is_none():
    rng = np.random.default_rng(2)
    M = 50_000
    draws = np.array([round_beta([0.2, 0.3], 1, rng) for _ in range(M)])
    assert abs((draws.sum(axis=1) == 0).mean() - 0.5) <= 3 * np.sqrt(0.25 / M)


def test_dependent_rounding_preserves_marginals():
    rng = np.random.default_rng(3)
    x = np.array([0.7, 0.4, 0.5, 0.2, 0.1])
    M = 40_000
    draws = np.array([round_beta(x, 2, rng) for _ in range(M)])
    assert draws.sum(axis=1).max() <= 2
    np.testing.assert_array_less(np.abs(draws.mean(axis=0) - x), 3 * np.sqrt(x * (1 - x) / M) + 1e-12)


def test_round_beta_cap_error():
    with pytest.raises(ValueError):
        round_beta([0.7, 0.7], 1, np.random.default_rng(0))


def test_state_validation():
    with pytest.raises(ValueError):
        state([1.2])
    with pytest.raises(ValueError):
        state([0.8, 0.8])
    with pytest.raises(ValueError):
        state([0.1], dual=[-1.0])
    with pytest.raises(ValueError):
        state([0.1], s_t=0)
    with pytest.raises(ValueError):
        state([0.1], varsigma=0.0)


def test_long_run_participation():
    # subscribing always costs something; only the floors pull beta up
    rng = np.random.default_rng(4)
    v = np.array([0.1, 0.2, 0.05])
    sw = SwitchState(np.zeros(3), v, 1, 0.1)
    grad = np.array([0.05, 0.02, 0.1])
    total = np.zeros(3)
    T = 2000
    for _ in range(T):
        dual_next = dual_update(sw, sw.v - sw.beta_hat)
        sw.beta_hat = primal_step(sw, grad, dual_next)
        sw.dual = dual_next
        total += round_beta(sw.beta_hat, sw.s_t, rng)
    assert np.all(total / T >= 0.9 * v)
