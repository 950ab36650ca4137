import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedswitch.bound import (BoundState, RateTermWarning, SmoothnessConstants, assumption3_violation,
                             estimate_constants, rate_terms_global, rate_terms_per_ue, risk_gap_bound)
from fedswitch.fedsim import DataShard, make_task


def test_constants_validation():
    with pytest.raises(ValueError):
        SmoothnessConstants(1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        SmoothnessConstants(1.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        SmoothnessConstants(2.0, 1.0, -1.0)
    assert SmoothnessConstants(4.0, 1.0, 1.0).eta == 0.25


def test_rate_terms_hand_case():
    c = SmoothnessConstants(2.0, 1.0, 1.0, 0.0)
    rng = np.random.default_rng(0)
    A, B = rate_terms_global(c, np.full(3, 1 / 3), rng.random((2, 3)), rng.integers(0, 2, (2, 3)))
    np.testing.assert_allclose(A, 0.0, atol=1e-15)
    np.testing.assert_allclose(B, 3.0, rtol=1e-15)


def test_per_ue_negative_case():
    c = SmoothnessConstants(2.0, 1.0, 1.0, 0.05)
    A, B = rate_terms_per_ue(c, [0.0], [0.0], K=2)
    assert A[0] == pytest.approx(-0.8, abs=1e-14)
    A0, B0 = rate_terms_per_ue(SmoothnessConstants(2.0, 1.0, 0.0, 0.05), [0.3], [0.0], K=2)
    assert B0[0] == 0.0


def test_subscribed_or_reliable_terms_ignore_the_other():
    c = SmoothnessConstants(3.0, 0.5, 0.7, 0.01)
    rho = np.array([0.2, 0.5, 0.3])
    rng = np.random.default_rng(1)
    full = ((2 * 0.5 / 3.0) * (1 - 4 * 0.01 * 3 - 1.5), (2 * 0.7 / 3.0) * 3)
    for lam, beta in [(rng.random((2, 3)), np.ones((2, 3))), (np.ones((2, 3)), rng.integers(0, 2, (2, 3)))]:
        A, B = rate_terms_global(c, rho, lam, beta)
        np.testing.assert_allclose(A, full[0], rtol=1e-14)
        np.testing.assert_allclose(B, full[1], rtol=1e-14)
    Ak, _ = rate_terms_per_ue(c, [0.2, 0.9], [1, 1], K=3)
    np.testing.assert_allclose(Ak, full[0], rtol=1e-14)


def test_rho_must_sum_to_one():
    c = SmoothnessConstants(2.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        rate_terms_global(c, [0.5, 0.6], np.ones((1, 2)), np.ones((1, 2)))


def literal_term2(A_hist, B_hist):
    t = len(A_hist) - 1
    total = 0.0
    for q in range(t + 1):
        prod = 1.0
        for p in range(q + 1, t + 1):
            prod *= np.sum(1.0 - A_hist[p])
        total += prod * np.sum(B_hist[q])
    return total


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), N=st.integers(1, 4), t=st.integers(0, 10))
def test_recursive_term2_matches_double_loop(seed, N, t):
    rng = np.random.default_rng(seed)
    A = [rng.uniform(0.05, 1.0, N) for _ in range(t + 1)]
    B = [rng.uniform(0.0, 2.0, N) for _ in range(t + 1)]
    state = BoundState()
    for a, b in zip(A, B):
        state.advance(a, b)
    ref = literal_term2(A, B)
    assert state.term2 == pytest.approx(ref, rel=1e-12, abs=1e-300)
    assert state.t == t


def test_single_round_substitution():
    c = SmoothnessConstants(1.5, 0.4, 0.3, 0.0)
    A, B = rate_terms_global(c, [1.0], [[0.8]], [[0]])
    state = BoundState()
    assert state.advance(A, B)
    gap, D_te, w0sq = 0.37, 17.0, 0.6
    terms = risk_gap_bound(state, c, [1.0], [[gap]], [D_te], w0sq)
    expect = ((1 - A[0]) * gap + literal_term2([A], [B]) + 1.5 * A[0] * math.sqrt(4 * 0.3 / (0.4**2 * D_te))
              + (1.5 + 2) / 4 * w0sq)
    assert terms.total == pytest.approx(expect, rel=1e-14)


def test_trivial_zero_bound():
    c = SmoothnessConstants(1.0, 1.0, 0.0, 0.0)
    state = BoundState()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert state.advance([1.0, 1.0], [0.0, 0.0])
    terms = risk_gap_bound(state, c, [0.5, 0.5], np.ones((2, 2)), [3, 4], 0.0)
    assert terms.total == 0.0


def test_violation_is_flagged_not_clamped():
    state = BoundState()
    with pytest.warns(RateTermWarning):
        ok = state.advance([-0.8, 0.5], [1.0, 1.0])
    assert not ok
    assert state.A_history[0][0] == -0.8


def test_bound_errors():
    c = SmoothnessConstants(2.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        risk_gap_bound(BoundState(), c, [1.0], [[0.0]], [1], 0.0)
    state = BoundState()
    state.advance([0.5], [0.1])
    with pytest.raises(ValueError):
        risk_gap_bound(state, c, [1.0], [[0.0]], [-1], 0.0)


def _bound_for(c, lam, beta, rho, gaps, D_te):
    A, B = rate_terms_global(c, rho, lam, beta)
    state = BoundState()
    assert state.advance(A, B)
    return risk_gap_bound(state, c, rho, gaps, D_te, 0.1).total


def test_bound_monotone_on_grid():
    c = SmoothnessConstants(1.0, 0.5, 0.1, 0.01)
    rho = np.array([0.5, 0.3, 0.2])
    gaps = np.full((3, 2), 0.2)
    D_te = np.full(3, 20.0)
    base_beta = np.array([[0, 1, 0], [1, 0, 0]])
    grid = np.linspace(0.05, 1.0, 12)
    for n, k in [(0, 0), (1, 1), (0, 2)]:
        vals = []
        for x in grid:
            lam = np.full((2, 3), 0.6)
            lam[n, k] = x
            vals.append(_bound_for(c, lam, base_beta, rho, gaps, D_te))
        assert np.all(np.diff(vals) <= 1e-15)
        lam = np.full((2, 3), 0.6)
        on = base_beta.copy()
        on[n, k] = 1
        off = base_beta.copy()
        off[n, k] = 0
        assert _bound_for(c, lam, off, rho, gaps, D_te) >= _bound_for(c, lam, on, rho, gaps, D_te)


@pytest.mark.parametrize("mode", ["quadratic", "logistic"])
def test_smoothness_brackets_per_sample_hessians(mode):
    task = make_task(mode, 3, 4, 3, 30, 1.0, 0.2, np.random.default_rng(2), feature_radius=0.8)
    eps, xi = task.smoothness()
    assert xi == 0.2
    R2 = task.feature_radius_sq()
    assert eps == pytest.approx((R2 if mode == "quadratic" else 0.5 * R2) + 0.2)
    rng = np.random.default_rng(3)
    for k in range(3):
        for i in range(5):
            s = task.train[k].subset([i])
            w = rng.standard_normal(task.dim)
            ev = np.linalg.eigvalsh(task.hessian(w, s))
            assert ev.min() >= xi - 1e-12
            assert ev.max() <= eps + 1e-12


def test_quadratic_hessian_top_eigenvalue_attained():
    # a single sample of norm R: eigenvalue R^2 + ridge is attained exactly
    x = np.array([[0.6, 0.8]])
    from fedswitch.fedsim import SyntheticTask
    task = SyntheticTask("quadratic", [DataShard(x, np.zeros((1, 1)))], [DataShard(x, np.zeros((1, 1)))],
                         np.zeros((2, 1)), 0.3, 1)
    assert task.smoothness() == pytest.approx((1.3, 0.3))
    assert np.linalg.eigvalsh(task.hessian(np.zeros(2), task.train[0])).max() == pytest.approx(1.3)


@pytest.mark.parametrize("zeta2", [0.0, 0.05])
def test_estimated_constants_pass_audit(zeta2):
    task = make_task("logistic", 4, 5, 3, 40, 0.5, 0.1, np.random.default_rng(4))
    c = estimate_constants(task, np.random.default_rng(5), zeta2=zeta2, n_samples=20000)
    assert c.zeta2 == zeta2 and c.zeta1 > 0
    assert assumption3_violation(task, c, np.random.default_rng(6), n_samples=100_000) <= 1.0


def test_zeta2_zero_gives_max_gradient_norm():
    task = make_task("quadratic", 2, 3, 2, 20, 1.0, 0.5, np.random.default_rng(7))
    rng = np.random.default_rng(8)
    c = estimate_constants(task, rng, zeta2=0.0, n_samples=200, safety=1.0)
    rng = np.random.default_rng(8)
    ws = task.sample_adapters(200, 2 * task.parameter_radius(), rng)
    idx = task.sample_points(200, rng)
    direct = []
    pool = task.pooled_train()
    for w, i in zip(ws, idx):
        direct.append(np.sum(task.gradient(w, pool.subset([i])) ** 2))
    np.testing.assert_allclose(task.per_sample_gradient_norms_sq(ws, idx), direct, rtol=1e-10)
    # same stream, same draws: zeta1 is exactly the largest squared gradient
    assert c.zeta1 == pytest.approx(max(direct), rel=1e-10)
