"""Wireless resource management: bandwidth shares and transmit power.

Bandwidth
    For a delay target ``E`` each link needs the share ``delta`` solving
    ``G / (W delta log2(1 + S / (I + W N0 delta))) = E``. Writing
    ``y = ln(1 + SINR) = -LW(varphi)`` turns the implicit equation for
    ``varphi`` into ``g(y) = expm1(y) (I + c / y) - S = 0`` with
    ``c = G N0 ln 2 / E``. ``g`` is strictly increasing with ``g(0+) = c - S``,
    so a root exists iff ``E > G N0 ln 2 / S`` and it is unique. Targets above
    an SINR of ``e - 1`` put ``LW`` on its lower branch.

    :func:`allocate_bandwidth` bisects the common target ``E`` until the
    scheduled shares fill the band to within ``omega``.

Power
    :func:`q_hat` is the per-UE relaxed objective, :func:`power_gradient` its
    analytic derivative in the noise-limited form, and :func:`optimize_power`
    minimises it on ``[P_min, P_max]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .bound import SmoothnessConstants
from .channel import DELTA_MIN, LinkParams, interference_exponent, noise_exponent, success_probability
from .lambertw import lambert_w

__all__ = [
    "VarphiBracketError",
    "VarphiRoot",
    "DeltaResult",
    "AllocationResult",
    "link_rate",
    "transmission_delay",
    "min_feasible_delay",
    "varphi_map",
    "solve_varphi",
    "optimal_delta",
    "required_delta",
    "allocate_bandwidth",
    "default_e_input",
    "q_hat",
    "power_gradient",
    "optimize_power",
    "optimize_power_batch",
]

LN2 = math.log(2.0)
Y_MAX = 700.0  # keeps exp(y) finite
VARPHI_TOL = 1e-10


class VarphiBracketError(RuntimeError):
    """No sign change of the bandwidth equation could be bracketed."""


class VarphiRoot(NamedTuple):
    varphi: float
    lw: float
    branch: int
    residual: float


class DeltaResult(NamedTuple):
    delta: float
    raw: float
    clipped: bool


def link_rate(delta, S, I, W, N0):
    """Achievable rate ``W delta log2(1 + S / (I + W N0 delta))`` in bit/s."""
    delta = np.asarray(delta, dtype=float)
    return W * delta * np.log2(1.0 + S / (I + W * N0 * delta))


def transmission_delay(G, delta, S, I, W, N0):
    return G / link_rate(delta, S, I, W, N0)


def min_feasible_delay(G, S, N0):
    """Infimum of achievable delays: the rate tends to ``S / (N0 ln 2)`` as bandwidth grows."""
    return G * N0 * LN2 / S


def _expm1_over_y(y):
    small = y < 1e-8
    safe = np.where(small, 1.0, y)
    return np.where(small, 1.0 + 0.5 * y, np.expm1(safe) / safe)


def _g(y, S, I, c):
    return np.expm1(y) * I + c * _expm1_over_y(y) - S


def _g_prime(y, S, I, c):
    small = y < 1e-4
    safe = np.where(small, 1.0, y)
    # (y e^y - expm1(y)) / y^2
    tail = np.where(small, 0.5 + y / 3.0 + y * y / 8.0, (safe * np.exp(safe) - np.expm1(safe)) / safe**2)
    return np.exp(y) * I + c * tail


def _solve_log_sinr(S, I, c, y0=None, max_iter: int = 200):
    """Vectorised root of ``g(y) = expm1(y)(I + c/y) - S`` for feasible entries.

    Returns ``y`` with ``nan`` where ``c >= S`` (target delay unattainable) and
    a boolean mask of entries whose bracket could not be closed below
    ``Y_MAX``.
    """
    S, I, c = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (S, I, c)))
    shape = S.shape
    S, I, c = S.ravel(), I.ravel(), c.ravel()
    y = np.full(S.shape, np.nan)
    feas = c < S
    fail = np.zeros(S.shape, dtype=bool)
    if not feas.any():
        return y.reshape(shape), fail.reshape(shape)
    s, i_, cc = S[feas], I[feas], c[feas]
    if y0 is not None:
        guess = np.asarray(y0, dtype=float).ravel()[feas]
        guess = np.where(np.isfinite(guess) & (guess > 0), guess, np.log1p(s / (i_ + cc)))
    else:
        guess = np.log1p(s / (i_ + cc))
    guess = np.clip(guess, 1e-12, Y_MAX)

    lo = np.zeros_like(s)
    hi = guess.copy()
    g_hi = _g(hi, s, i_, cc)
    for _ in range(64):
        grow = (g_hi < 0) & (hi < Y_MAX)
        if not grow.any():
            break
        lo[grow] = hi[grow]
        hi[grow] = np.minimum(hi[grow] * 2.0, Y_MAX)
        g_hi[grow] = _g(hi[grow], s[grow], i_[grow], cc[grow])
    fail_sub = ~(g_hi >= 0)

    # g is convex and increasing, so Newton from the upper end descends
    # monotonically onto the root; bisection only guards against rounding
    x = hi.copy()
    active = ~fail_sub
    for _ in range(max_iter):
        if not active.any():
            break
        xa = x[active]
        ga = _g(xa, s[active], i_[active], cc[active])
        neg = ga < 0
        lo_a = np.where(neg, xa, lo[active])
        hi_a = np.where(neg, hi[active], xa)
        step = ga / _g_prime(xa, s[active], i_[active], cc[active])
        nxt = xa - step
        bad = ~np.isfinite(nxt) | (nxt <= lo_a) | (nxt >= hi_a)
        nxt = np.where(bad, 0.5 * (lo_a + hi_a), nxt)
        settled = np.abs(ga) <= 2e-14 * s[active]  # rounding floor of g near large y
        done = settled | (np.abs(nxt - xa) <= 4e-16 * xa) | (hi_a - lo_a <= 4e-16 * hi_a)
        lo[active], hi[active] = lo_a, hi_a
        x[active] = np.where(settled, xa, nxt)
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    sol = np.where(fail_sub, np.nan, x)
    y[feas] = sol
    fail[feas] = fail_sub
    return y.reshape(shape), fail.reshape(shape)


def varphi_map(varphi, lw, E_target, S, I, G_dw, N0):
    """Right-hand side of the implicit bandwidth equation for ``varphi``."""
    return (G_dw * N0 * LN2 / (E_target * S) - (I / S) * lw) * (varphi / lw - 1.0)


def solve_varphi(E_target, P_k, gain, interference, G_dw, N0) -> VarphiRoot:
    """Solve the implicit equation for ``varphi`` at a delay target.

    Parameters
    ----------
    E_target : float
        Delay target (s).
    P_k : float
        Transmit power (W).
    gain : float
        Channel power gain ``|h_k|^2 d_k^-alpha``; the received signal is
        ``P_k * gain``.
    interference : float
        Aggregate interference power (W).
    G_dw : float
        Upload payload (bits).
    N0 : float
        Noise density (W/Hz).

    Returns
    -------
    VarphiRoot
        ``varphi``, its Lambert-W value, the branch used and the residual of
        the fixed-point equation.

    Raises
    ------
    VarphiBracketError
        When the target is below the infinite-bandwidth delay or the root
        cannot be bracketed.
    """
    if not E_target > 0:
        raise ValueError("delay target must be positive")
    S = P_k * gain
    if not S > 0:
        raise ValueError("received signal power must be positive")
    c = G_dw * N0 * LN2 / E_target
    y, fail = _solve_log_sinr(S, interference, c)
    y = float(y)
    if bool(fail) or not math.isfinite(y):
        raise VarphiBracketError(
            f"varphi bracket failure: E_target={E_target:.6g}s, minimum feasible delay "
            f"{min_feasible_delay(G_dw, S, N0):.6g}s, S={S:.6g}W, I={interference:.6g}W, G={G_dw:.6g}bit"
        )
    lw = -y
    varphi = lw * math.exp(lw)
    branch = 0 if y <= 1.0 else -1
    lw_eval = lambert_w(varphi, branch) if varphi > -math.exp(-1.0) else -1.0
    residual = abs(varphi - varphi_map(varphi, lw_eval, E_target, S, interference, G_dw, N0))
    if not residual <= VARPHI_TOL:
        raise VarphiBracketError(f"varphi residual {residual:.3g} above {VARPHI_TOL:g} (E_target={E_target:.6g})")
    return VarphiRoot(varphi, lw_eval, branch, residual)


def optimal_delta(varphi, P_k, h_k_sq, d_k, alpha, interference, W, N0, branch: int = 0,
                  delta_min: float = DELTA_MIN) -> DeltaResult:
    """Bandwidth share from ``varphi``:
    ``S / (W N0 (exp(-LW(varphi)) - 1)) - I / (W N0)``, clipped to ``[delta_min, 1]``.
    """
    if varphi == 0:
        raise ValueError("varphi = 0 is a singular point of the bandwidth formula")
    lw = lambert_w(varphi, branch)
    S = h_k_sq * P_k * d_k ** (-alpha)
    raw = S / (W * N0 * math.expm1(-lw)) - interference / (W * N0)
    delta = min(max(raw, delta_min), 1.0)
    return DeltaResult(delta, raw, delta != raw)


def required_delta(E_target, S, I, G, W, N0, y0=None):
    """Raw shares needed by each link to finish ``G`` bits within ``E_target``.

    Vectorised over any broadcastable shapes; ``inf`` marks unattainable
    targets. Also returns the solved ``y = ln(1 + SINR)`` for warm starts.
    """
    c = np.asarray(G, dtype=float) * N0 * LN2 / E_target
    y, fail = _solve_log_sinr(S, I, c, y0)
    with np.errstate(divide="ignore", invalid="ignore"):
        # W delta = G ln2 / (E y) is the delay identity at the root; free of cancellation
        raw = np.asarray(G, dtype=float) * LN2 / (E_target * y * W)
    raw = np.where(np.isfinite(y) & ~fail, raw, np.inf)
    return raw, y


def default_e_input(beta, S, I, G, W, N0) -> float:
    """Upper search limit for the delay target.

    ``max(10 * max_j e_j, sum_j e_j)`` over scheduled links, ``e_j`` being
    the full-band delay. With ``E = sum_j e_j`` the shares ``e_j / E`` meet
    the target (the rate is concave in the share), so the upper end is
    always feasible.
    """
    e_full = transmission_delay(G, 1.0, S, I, W, N0)
    sched = np.asarray(beta, dtype=bool)
    e = np.broadcast_to(e_full, sched.shape)[sched]
    return float(max(10.0 * e.max(), e.sum()))


@dataclass
class AllocationResult:
    delta: np.ndarray
    raw: np.ndarray
    E_t: float
    iterations: int
    converged: bool
    delta_sum: float
    clipped: np.ndarray
    E_input: float
    history: list
    floor_bound: bool = False


def allocate_bandwidth(beta, P, gain, interference, G_dw, W, N0, E_min, omega=1e-3, j_max=60,
                       E_input=None, delta_min=DELTA_MIN) -> AllocationResult:
    """Two-tier binary search for the common delay target and bandwidth shares.

    Parameters
    ----------
    beta : (N, K) array
        Subscription bits.
    P, gain, interference : (K,) arrays
        Transmit powers (W), channel gains ``|h|^2 d^-alpha`` and interference (W).
    G_dw : (N,) array
        Upload payload per module (bits).
    E_min : float
        Lower end of the delay search (s).
    omega : float
        Accepted unallocated fraction of the band.
    E_input : float, optional
        Upper end of the search; see :func:`default_e_input`.

    Returns
    -------
    AllocationResult
        Shares for every (module, UE) pair, clipped to ``[delta_min, 1]``,
        the delay target, and convergence diagnostics. If the search does not
        converge within ``j_max`` iterations the tightest evaluated
        allocation with total share at most 1 is returned. If the links
        need less than the whole band even at ``E_min``, the band cannot be
        filled on ``[E_min, E_input]``; the ``E_min`` allocation is returned
        with ``floor_bound=True`` (and ``converged=False`` unless it already
        lies within ``omega`` of a full band).
    """
    beta = np.atleast_2d(np.asarray(beta))
    sched = beta.astype(bool)
    if not sched.any():
        raise ValueError("nothing scheduled: all subscription bits are zero")
    N, K = beta.shape
    S = np.broadcast_to(np.asarray(P, dtype=float) * np.asarray(gain, dtype=float), (N, K))
    I = np.broadcast_to(np.asarray(interference, dtype=float), (N, K))
    G = np.broadcast_to(np.asarray(G_dw, dtype=float).reshape(-1, 1), (N, K))
    explicit = E_input is not None
    if not explicit:
        E_input = default_e_input(sched, S, I, G, W, N0)
    if explicit and not E_min < E_input:
        raise ValueError(f"E_min={E_min} must be below E_input={E_input}")

    # bisect on the scheduled links only; the full matrix is solved once at the end
    s_s, i_s, g_s = S[sched], I[sched], G[sched]
    raw_s, _ = required_delta(E_min, s_s, i_s, g_s, W, N0)
    floor_total = float(raw_s.sum())
    if floor_total <= 1.0:
        # the delay floor binds: no target in [E_min, E_input] uses the whole band
        raw, _ = required_delta(E_min, S, I, G, W, N0)
        delta = np.clip(raw, delta_min, 1.0)
        return AllocationResult(delta, raw, E_min, 1, floor_total >= 1.0 - omega, floor_total, delta != raw,
                                E_input, [(E_min, floor_total)], floor_bound=True)
    e_up, e_down = E_input, E_min
    e_t = 0.5 * (e_up + e_down)
    y = None
    best = None
    history = []
    converged = False
    j = 0
    for j in range(1, j_max + 1):
        raw_s, y = required_delta(e_t, s_s, i_s, g_s, W, N0, y)
        total = float(raw_s.sum())
        history.append((e_t, total))
        if total <= 1.0 and (best is None or total > best[1]):
            best = (e_t, total)
        if 1.0 - omega <= total <= 1.0:
            converged = True
            break
        if total > 1.0:
            e_down = e_t
            e_t = 0.5 * (e_t + e_up)
        else:
            e_up = e_t
            e_t = 0.5 * (e_t + e_down)
    if converged:
        e_final = e_t
    elif best is not None:
        e_final, total = best
    else:
        e_final = e_up
    raw, _ = required_delta(e_final, S, I, G, W, N0)
    total = float(raw[sched].sum())
    delta = np.clip(raw, delta_min, 1.0)
    clipped = delta != raw
    return AllocationResult(delta, raw, e_final, j, converged, total, clipped, E_input, history)


# --- power control -----------------------------------------------------------------------------


def _penalty_weights(beta_k, B_prev, consts: SmoothnessConstants):
    c = consts
    return (1.0 - np.asarray(beta_k, dtype=float)) * (
        16 * c.xi * c.zeta2 / c.epsilon * np.asarray(B_prev, dtype=float) + 4 * c.zeta1 / c.epsilon
    )


def q_hat(P_k, beta_k, delta_k, B_prev, consts, mu, E_t, link: LinkParams, include_interference: bool = True):
    """Relaxed per-UE objective at power ``P_k``.

    ``(16 xi zeta2/eps) sum_n B_n (1-lam_n)(1-beta_n) + (4 zeta1/eps) sum_n
    (1-lam_n)(1-beta_n) + mu sum_n beta_n P E``, with ``lam_n`` the closed-form
    success probability at ``(P_k, delta_n)``. ``include_interference=False``
    drops the power-independent interference factor from ``lam``.
    """
    w = _penalty_weights(beta_k, B_prev, consts)
    if include_interference:
        lam = success_probability(P_k, delta_k, link)
    else:
        lam = np.exp(-noise_exponent(P_k, delta_k, link))
    return float(np.sum(w * (1.0 - lam)) + mu * float(np.sum(beta_k)) * P_k * E_t)


def power_gradient(P_k, beta_k, delta_k, B_prev, consts, mu, E_t, link: LinkParams) -> float:
    """Analytic derivative of :func:`q_hat` in ``P_k`` with the noise-limited
    success probability ``exp(-a/P)``:
    ``-sum_n w_n (a_n / P^2) exp(-a_n / P) + mu E sum_n beta_n``.
    """
    if not P_k > 0:
        raise ValueError("transmit power must be positive")
    w = _penalty_weights(beta_k, B_prev, consts)
    a = noise_exponent(1.0, np.asarray(delta_k, dtype=float), link)
    return float(-np.sum(w * a / P_k**2 * np.exp(-a / P_k)) + mu * float(np.sum(beta_k)) * E_t)


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _objective(P, w, a, eb, load):
    # P: (K, M); w, a: (K, N); eb, load: (K,)
    lam = eb[:, None, None] * np.exp(-a[:, None, :] / P[:, :, None])
    return np.sum(w[:, None, :] * (1.0 - lam), axis=2) + load[:, None] * P


def optimize_power_batch(beta, delta, B_prev, consts, mu, E_t, links, P_max, P_min,
                         grid: int = 64, candidates: int = 3, golden_iters: int = 60) -> np.ndarray:
    """Minimise :func:`q_hat` for every UE at once.

    A log-spaced scan of ``grid`` points locates the basins (points where the
    scanned objective stops decreasing); the best ``candidates`` basins are
    refined by golden-section search between their neighbouring scan points
    and the overall best value wins.

    ``beta``, ``delta`` and ``B_prev`` are ``(N, K)``; ``links`` has length K.
    """
    if not 0 < P_min <= P_max:
        raise ValueError("need 0 < P_min <= P_max")
    beta = np.atleast_2d(np.asarray(beta, dtype=float)).T
    delta = np.atleast_2d(np.asarray(delta, dtype=float)).T
    B_prev = np.atleast_2d(np.asarray(B_prev, dtype=float)).T
    K = beta.shape[0]
    w = _penalty_weights(beta, B_prev, consts)
    a = np.stack([noise_exponent(1.0, delta[k], links[k]) for k in range(K)])
    eb = np.exp(-np.array([interference_exponent(l) for l in links]))
    load = mu * beta.sum(axis=1) * E_t
    if P_min == P_max:
        return np.full(K, P_min)

    scan = np.geomspace(P_min, P_max, grid)
    vals = _objective(np.broadcast_to(scan, (K, grid)), w, a, eb, load)
    pad = np.pad(vals, ((0, 0), (1, 1)), constant_values=np.inf)
    local = (vals <= pad[:, :-2]) & (vals <= pad[:, 2:])
    ranked = np.where(local, vals, np.inf)
    picks = np.argsort(ranked, axis=1, kind="stable")[:, :candidates]
    # non-basin picks fall back to the global scan minimum
    best_idx = np.argmin(vals, axis=1)
    picks = np.where(np.isfinite(np.take_along_axis(ranked, picks, axis=1)), picks, best_idx[:, None])

    lo = scan[np.maximum(picks - 1, 0)]
    hi = scan[np.minimum(picks + 1, grid - 1)]
    C = picks.shape[1]
    wr = np.repeat(w, C, axis=0)
    ar = np.repeat(a, C, axis=0)
    ebr = np.repeat(eb, C)
    loadr = np.repeat(load, C)
    lo = lo.reshape(-1, 1)
    hi = hi.reshape(-1, 1)
    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1 = _objective(x1, wr, ar, ebr, loadr)
    f2 = _objective(x2, wr, ar, ebr, loadr)
    for _ in range(golden_iters):
        left = f1 <= f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        x2n = np.where(left, x1, lo + _GOLDEN * (hi - lo))
        x1n = np.where(left, hi - _GOLDEN * (hi - lo), x2)
        f2n = np.where(left, f1, np.nan)
        f1n = np.where(left, np.nan, f2)
        x1, x2 = x1n, x2n
        need1 = np.isnan(f1n)
        need2 = np.isnan(f2n)
        f1 = np.where(need1, _objective(x1, wr, ar, ebr, loadr), f1n)
        f2 = np.where(need2, _objective(x2, wr, ar, ebr, loadr), f2n)
    cand_p = np.concatenate([x1, x2, lo, hi], axis=1).reshape(K, C * 4)
    cand_p = np.concatenate([cand_p, scan[best_idx][:, None], np.full((K, 1), P_min), np.full((K, 1), P_max)], axis=1)
    cand_v = _objective(cand_p, w, a, eb, load)
    choice = np.argmin(cand_v, axis=1)
    return np.clip(cand_p[np.arange(K), choice], P_min, P_max)


def optimize_power(beta_k, delta_k, B_prev, consts, mu, E_t, link: LinkParams, P_max, P_min) -> float:
    """Transmit power of one UE minimising :func:`q_hat` on ``[P_min, P_max]``."""
    out = optimize_power_batch(
        np.asarray(beta_k, dtype=float).reshape(-1, 1),
        np.asarray(delta_k, dtype=float).reshape(-1, 1),
        np.asarray(B_prev, dtype=float).reshape(-1, 1),
        consts, mu, E_t, [link], P_max, P_min,
    )
    return float(out[0])
