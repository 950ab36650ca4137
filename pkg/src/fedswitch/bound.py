"""Upper bound on the expected inference risk gap and its rate terms.

The bound has four parts: local fine-tuning convergence, the accumulated
impact of unreliable uploads, data heterogeneity, and the frozen foundation
model. The accumulation term is a nested product over rounds and is kept
recursively in :class:`BoundState`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SmoothnessConstants",
    "BoundState",
    "BoundTerms",
    "RateTermWarning",
    "rate_terms_global",
    "rate_terms_per_ue",
    "risk_gap_bound",
    "estimate_constants",
    "assumption3_violation",
]

RHO_TOL = 1e-9


class RateTermWarning(UserWarning):
    """A convergence-rate term left the contraction range (0, 1]."""


@dataclass(frozen=True)
class SmoothnessConstants:
    """Curvature and gradient-growth constants of the per-sample loss.

    ``xi I <= hess l <= epsilon I`` and
    ``||grad l||^2 <= zeta1 + zeta2 ||grad F||^2``.
    """

    epsilon: float
    xi: float
    zeta1: float
    zeta2: float = 0.0
    eta: float | None = None

    def __post_init__(self):
        if not self.xi > 0:
            raise ValueError("xi must be positive")
        if self.epsilon < self.xi:
            raise ValueError("epsilon must be >= xi")
        if self.zeta1 < 0 or self.zeta2 < 0:
            raise ValueError("zeta1 and zeta2 must be non-negative")
        if self.eta is None:
            object.__setattr__(self, "eta", 1.0 / self.epsilon)
        elif not self.eta > 0:
            raise ValueError("step size must be positive")


def _check_rho(rho):
    rho = np.asarray(rho, dtype=float)
    if abs(rho.sum() - 1.0) > RHO_TOL:
        raise ValueError(f"data weights must sum to 1, got {rho.sum()!r}")
    return rho


def rate_terms_global(consts: SmoothnessConstants, rho, lam, beta, K: int | None = None):
    """Per-module rate terms ``A_n`` and ``B_n``.

    Parameters
    ----------
    rho : (K,) array
        Data-volume weights, summing to one.
    lam, beta : (N, K) arrays
        Success probabilities and subscription bits.
    K : int, optional
        Number of UEs; defaults to ``len(rho)``.

    Returns
    -------
    A, B : (N,) arrays
    """
    rho = _check_rho(rho)
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    K = len(rho) if K is None else K
    c = consts
    miss = ((1.0 - lam) * (1.0 - beta)) @ rho
    A = (2 * c.xi / c.epsilon) * (1.0 - 8 * c.zeta2 * miss - 4 * c.zeta2 * K - c.epsilon / 2)
    B = (2 * c.zeta1 / c.epsilon) * (K + 2 * miss)
    return A, B


def rate_terms_per_ue(consts: SmoothnessConstants, lambda_k, beta_k, K: int):
    """UE-level rate terms ``A_{n,k}``, ``B_{n,k}`` for the module vector of one UE."""
    lam = np.asarray(lambda_k, dtype=float)
    beta = np.asarray(beta_k, dtype=float)
    c = consts
    miss = (1.0 - lam) * (1.0 - beta)
    A = (2 * c.xi / c.epsilon) * (1.0 - 8 * c.zeta2 * miss - 4 * c.zeta2 * K - c.epsilon / 2)
    B = (2 * c.zeta1 / c.epsilon) * (K + 2 * miss)
    return A, B


@dataclass
class BoundState:
    """History of per-module rate terms plus the running accumulation term.

    ``term2(t) = [sum_n (1 - A_n^t)] * term2(t-1) + sum_n B_n^t``, with
    ``term2(-1) = 0``.
    """

    A_history: list = field(default_factory=list)
    B_history: list = field(default_factory=list)
    term2: float = 0.0

    @property
    def t(self) -> int:
        return len(self.A_history) - 1

    def advance(self, A, B) -> bool:
        """Append round-``t`` terms. Returns ``False`` if any ``A_n`` is outside (0, 1]."""
        A = np.asarray(A, dtype=float).copy()
        B = np.asarray(B, dtype=float).copy()
        self.term2 = float(np.sum(1.0 - A)) * self.term2 + float(np.sum(B))
        self.A_history.append(A)
        self.B_history.append(B)
        valid = bool(np.all((A > 0) & (A <= 1)))
        if not valid:
            warnings.warn(f"rate term A outside (0, 1] at round {self.t}: {A}", RateTermWarning, stacklevel=2)
        return valid


@dataclass(frozen=True)
class BoundTerms:
    term1: float
    term2: float
    term3: float
    term4: float

    @property
    def total(self) -> float:
        return self.term1 + self.term2 + self.term3 + self.term4


def risk_gap_bound(state: BoundState, consts, rho, current_local_gaps, D_te, w0_norm_sq) -> BoundTerms:
    """Evaluate the four-term bound at the latest round held in ``state``.

    Parameters
    ----------
    current_local_gaps : (K, N) array
        ``F_k(dw_n^t) - F_k(w*_{k,t})`` on each UE's test shard.
    D_te : (K,) array
        Test-shard sizes.
    w0_norm_sq : float
        Squared norm of the foundation parameters.
    """
    if not state.A_history:
        raise ValueError("bound state holds no rounds")
    rho = _check_rho(rho)
    d_te = np.asarray(D_te, dtype=float)
    if np.any(d_te < 0):
        raise ValueError("test-set sizes must be non-negative")
    gaps = np.atleast_2d(np.asarray(current_local_gaps, dtype=float))
    K, N = gaps.shape
    A = state.A_history[-1]
    c = consts
    term1 = float(rho @ (gaps @ (1.0 - A))) / N
    with np.errstate(divide="ignore"):
        hetero = np.sqrt(4 * c.zeta1 / (c.xi**2 * d_te))
    term3 = c.epsilon / N * float(np.sum(rho * hetero) * np.sum(A))
    term4 = (c.epsilon + 2) / 4 * float(np.sum(rho)) * w0_norm_sq
    return BoundTerms(term1, state.term2, term3, term4)


def estimate_constants(task, rng: np.random.Generator, zeta2: float = 0.0, n_samples: int = 20000,
                       radius: float | None = None, safety: float = 1.2) -> SmoothnessConstants:
    """Make the curvature and gradient-growth constants of ``task`` concrete.

    ``epsilon`` and ``xi`` come from the task's closed-form Hessian bounds. For
    the chosen ``zeta2``, ``zeta1`` is ``safety`` times the largest observed
    ``||grad l||^2 - zeta2 ||grad F||^2`` over ``n_samples`` random
    (adapter, sample) pairs, adapters drawn uniformly from the ball of
    radius ``radius`` (default: twice the farthest per-UE optimum) around 0.

    ``task`` must provide ``smoothness()``, ``parameter_radius()``,
    ``sample_adapters(n, radius, rng)``, ``sample_points(n, rng)``,
    ``per_sample_gradient_norms_sq(dws, idx)`` and
    ``global_gradient_norms_sq(dws)``.
    """
    if zeta2 < 0:
        raise ValueError("zeta2 must be non-negative")
    epsilon, xi = task.smoothness()
    radius = 2.0 * task.parameter_radius() if radius is None else radius
    excess = _gradient_excess(task, rng, zeta2, n_samples, radius)
    zeta1 = max(safety * float(excess.max()), 0.0)
    return SmoothnessConstants(epsilon=epsilon, xi=xi, zeta1=zeta1, zeta2=zeta2)


def _gradient_excess(task, rng, zeta2, n_samples, radius, batch: int = 200):
    out = []
    left = n_samples
    while left > 0:
        m = min(batch, left)
        dws = task.sample_adapters(m, radius, rng)
        idx = task.sample_points(m, rng)
        g_l = task.per_sample_gradient_norms_sq(dws, idx)
        g_f = task.global_gradient_norms_sq(dws) if zeta2 else 0.0
        out.append(g_l - zeta2 * g_f)
        left -= m
    return np.concatenate(out)


def assumption3_violation(task, consts: SmoothnessConstants, rng, n_samples: int = 100000,
                          radius: float | None = None) -> float:
    """Largest ``(||grad l||^2 - zeta2 ||grad F||^2) / zeta1`` on fresh samples.

    A value ``<= 1`` means the constants held on every audited sample.
    """
    radius = 2.0 * task.parameter_radius() if radius is None else radius
    excess = _gradient_excess(task, rng, consts.zeta2, n_samples, radius)
    if consts.zeta1 == 0:
        return math.inf if excess.max() > 0 else 0.0
    return float(excess.max() / consts.zeta1)
