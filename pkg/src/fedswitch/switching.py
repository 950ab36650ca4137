"""Online module switching for one UE.

The relaxed per-round cost is linear in the fractional subscription vector.
Participation floors are handled by dual ascent on their multipliers, the
primal step minimises the linearised Lagrangian under the subscription cap,
and randomised rounding turns fractional vectors into binary decisions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bound import SmoothnessConstants

__all__ = [
    "SwitchState",
    "switching_cost",
    "switching_gradient",
    "dual_update",
    "primal_step",
    "round_beta",
]

CAP_TOL = 1e-9


@dataclass
class SwitchState:
    """Primal-dual state of one UE.

    Attributes
    ----------
    beta_hat : (N,) array
        Last fractional subscription vector.
    dual : (N,) array
        Multipliers of the participation constraints ``v_n - beta_n <= 0``.
    varsigma : float
        Dual step size.
    s_t : int
        Subscription cap per round.
    v : (N,) array
        Participation-rate floors.
    """

    beta_hat: np.ndarray
    v: np.ndarray
    s_t: int = 1
    varsigma: float = 0.1
    dual: np.ndarray = field(default=None)

    def __post_init__(self):
        self.beta_hat = np.asarray(self.beta_hat, dtype=float).copy()
        n = len(self.beta_hat)
        self.v = np.broadcast_to(np.asarray(self.v, dtype=float), (n,)).copy()
        if self.dual is None:
            self.dual = np.zeros(n)
        else:
            self.dual = np.asarray(self.dual, dtype=float).copy()
        if np.any(self.beta_hat < 0) or np.any(self.beta_hat > 1):
            raise ValueError("beta_hat entries must lie in [0, 1]")
        if self.beta_hat.sum() > self.s_t + CAP_TOL:
            raise ValueError("beta_hat exceeds the subscription cap")
        if np.any(self.dual < 0):
            raise ValueError("dual variables must be non-negative")
        if self.s_t < 1 or int(self.s_t) != self.s_t:
            raise ValueError("subscription cap must be a positive integer")
        if self.varsigma <= 0:
            raise ValueError("dual step size must be positive")


def _coefficients(B_prev, lambda_nk, consts: SmoothnessConstants):
    """Per-module weight of the unreliability penalty ``(1 - lambda)(1 - beta)``."""
    c = consts
    return (16 * c.xi * c.zeta2 / c.epsilon) * np.asarray(B_prev, dtype=float) + 4 * c.zeta1 / c.epsilon


def switching_cost(beta, B_prev, lambda_nk, consts, mu, energy) -> float:
    """Relaxed round cost of one UE for a (fractional) subscription vector.

    ``(16 xi zeta2 / eps) sum_n B_n (1-lam_n)(1-beta_n)
    + (4 zeta1 / eps) sum_n (1-lam_n)(1-beta_n) + mu sum_n beta_n C_n``
    """
    beta = np.asarray(beta, dtype=float)
    miss = (1.0 - np.asarray(lambda_nk, dtype=float)) * (1.0 - beta)
    return float(np.sum(_coefficients(B_prev, lambda_nk, consts) * miss) + mu * np.sum(beta * np.asarray(energy)))


def switching_gradient(B_prev, lambda_nk, consts, mu, energy) -> np.ndarray:
    """Gradient of :func:`switching_cost` in ``beta`` (constant: the cost is linear)."""
    lam = np.asarray(lambda_nk, dtype=float)
    return -_coefficients(B_prev, lam, consts) * (1.0 - lam) + mu * np.asarray(energy, dtype=float)


def dual_update(state: SwitchState, z_t) -> np.ndarray:
    """Projected dual ascent, ``max(0, dual + varsigma * z_t)``."""
    return np.maximum(0.0, state.dual + state.varsigma * np.asarray(z_t, dtype=float))


def primal_step(state: SwitchState, grad_Q, dual_next) -> np.ndarray:
    """Minimise the linearised Lagrangian over ``{beta in [0,1]^N : sum beta <= s_t}``.

    The objective reduces to ``sum_n (grad_n - dual_n) beta_n`` plus a constant,
    so an optimal vertex takes the (at most ``s_t``) strictly negative
    coefficients, most negative first; ties go to the lower module index.
    """
    coef = np.asarray(grad_Q, dtype=float) - np.asarray(dual_next, dtype=float)
    order = np.argsort(coef, kind="stable")
    beta = np.zeros(len(coef))
    for n in order[: state.s_t]:
        if coef[n] < 0:
            beta[n] = 1.0
    return beta


def round_beta(beta_hat, s_t: int, rng: np.random.Generator) -> np.ndarray:
    """Round a fractional subscription vector to a binary one.

    With ``s_t == 1`` exactly one module is drawn with probability
    ``beta_hat_n`` (none with the leftover mass). With larger caps, pairwise
    dependent rounding preserves every marginal and never exceeds
    ``ceil(sum beta_hat) <= s_t``.
    """
    x = np.asarray(beta_hat, dtype=float).copy()
    if x.sum() > s_t + CAP_TOL:
        raise ValueError(f"sum(beta_hat)={x.sum()!r} exceeds the cap s_t={s_t}")
    eps = 1e-12
    frac = (x > eps) & (x < 1 - eps)
    if not frac.any():
        return np.round(x).astype(int)
    if s_t == 1:
        out = np.zeros(len(x), dtype=int)
        u = rng.random()
        cum = np.cumsum(x)
        n = int(np.searchsorted(cum, u, side="right"))
        if n < len(x):
            out[n] = 1
        return out
    idx = list(np.flatnonzero(frac))
    while len(idx) >= 2:
        i, j = idx[0], idx[1]
        up = min(1.0 - x[i], x[j])
        down = min(x[i], 1.0 - x[j])
        if rng.random() < down / (up + down):
            x[i] += up
            x[j] -= up
        else:
            x[i] -= down
            x[j] += down
        idx = [k for k in idx if eps < x[k] < 1 - eps]
    if idx:
        k = idx[0]
        x[k] = 1.0 if rng.random() < x[k] else 0.0
    return np.round(x).astype(int)
