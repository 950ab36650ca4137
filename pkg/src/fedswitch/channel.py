"""Uplink channel: Rayleigh fading, Poisson interferer field, SINR, success probability.

All powers are linear (W), the SINR threshold ``theta`` is linear, distances
are in metres and the gNB density is per square metre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

__all__ = [
    "DELTA_MIN",
    "LinkParams",
    "ChannelRealization",
    "QuadratureError",
    "sample_realization",
    "sample_interference",
    "sample_model_field",
    "sinr",
    "sinr_values",
    "success_indicator",
    "interference_integral",
    "success_probability",
    "far_field_log_laplace",
    "noise_exponent",
    "interference_exponent",
]

DELTA_MIN = 1e-6

J_ABS_TOL = 1e-10
COVERAGE_CONSTANT = 12.0 / (5.0 * math.pi)


class QuadratureError(RuntimeError):
    """Raised when the interference integral fails to converge."""


@dataclass(frozen=True)
class LinkParams:
    """Static parameters of one UE -> gNB link."""

    d_k: float
    alpha: float
    theta: float
    phi_density: float
    W: float
    N0: float

    def __post_init__(self):
        if not self.d_k > 0:
            raise ValueError(f"d_k must be positive, got {self.d_k}")
        if not self.alpha > 2:
            raise ValueError(f"alpha must exceed 2, got {self.alpha}")
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if not self.phi_density >= 0:
            raise ValueError(f"phi_density must be non-negative, got {self.phi_density}")
        if not self.W > 0:
            raise ValueError(f"W must be positive, got {self.W}")
        if not self.N0 > 0:
            raise ValueError(f"N0 must be positive, got {self.N0}")

    def path_gain(self) -> float:
        return self.d_k ** (-self.alpha)


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of the serving fading gain and the out-of-cell interferers."""

    h_k: float
    interferer_distances: np.ndarray = field(default_factory=lambda: np.empty(0))
    interferer_powers: np.ndarray = field(default_factory=lambda: np.empty(0))
    interferer_gains: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        if self.h_k < 0:
            raise ValueError("fading gain must be non-negative")
        n = len(self.interferer_distances)
        if len(self.interferer_powers) != n or len(self.interferer_gains) != n:
            raise ValueError("interferer arrays must have equal length")
        if n and np.any(self.interferer_distances <= 0):
            raise ValueError("interferer distances must be positive")
        if n and np.any(self.interferer_gains < 0):
            raise ValueError("interferer gains must be non-negative")

    @property
    def n_interferers(self) -> int:
        return len(self.interferer_distances)

    def interference(self, alpha: float) -> float:
        """Aggregate received interference power (W)."""
        if self.n_interferers == 0:
            return 0.0
        return float(
            np.sum(self.interferer_gains * self.interferer_powers * self.interferer_distances ** (-alpha))
        )


def _check_radius(link: LinkParams, radius: float, guard: float):
    if not radius > link.d_k:
        raise ValueError(f"interferer field radius {radius} must exceed d_k={link.d_k}")
    if not 0 <= guard < radius:
        raise ValueError(f"guard radius {guard} must lie in [0, radius)")


def _annulus_radii(rng: np.random.Generator, n, radius: float, guard: float) -> np.ndarray:
    # area-uniform in the annulus [guard, radius]; guard=0 gives the full disk
    u = rng.random(n)
    return np.sqrt(guard**2 + u * (radius**2 - guard**2))


def sample_realization(
    link: LinkParams,
    interferer_field_radius: float,
    rng: np.random.Generator,
    p_max: float = 0.2,
    guard_radius: float = 0.0,
) -> ChannelRealization:
    """Draw fading and a Poisson field of out-of-cell interferers.

    The interferer count is Poisson with mean ``phi * area``, positions are
    uniform over the disk (or the annulus outside ``guard_radius``), powers are
    uniform on ``(0, p_max]`` and every fading power gain is ``Exp(1)``.
    """
    _check_radius(link, interferer_field_radius, guard_radius)
    h_k = float(rng.exponential())
    area = math.pi * (interferer_field_radius**2 - guard_radius**2)
    count = int(rng.poisson(link.phi_density * area)) if link.phi_density > 0 else 0
    if count == 0:
        return ChannelRealization(h_k)
    dist = _annulus_radii(rng, count, interferer_field_radius, guard_radius)
    # 1 - U lies in (0, 1]
    powers = p_max * (1.0 - rng.random(count))
    gains = rng.exponential(size=count)
    return ChannelRealization(h_k, dist, powers, gains)


def sample_interference(
    link: LinkParams,
    interferer_field_radius: float,
    size: int,
    rng: np.random.Generator,
    p_max: float = 0.2,
    guard_radius: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`sample_realization`: ``size`` independent draws.

    Returns the serving fading gains and the aggregate interference powers.
    """
    _check_radius(link, interferer_field_radius, guard_radius)
    h_k = rng.exponential(size=size)
    area = math.pi * (interferer_field_radius**2 - guard_radius**2)
    if link.phi_density == 0:
        return h_k, np.zeros(size)
    counts = rng.poisson(link.phi_density * area, size=size)
    total = int(counts.sum())
    dist = _annulus_radii(rng, total, interferer_field_radius, guard_radius)
    powers = p_max * (1.0 - rng.random(total))
    gains = rng.exponential(size=total)
    owner = np.repeat(np.arange(size), counts)
    interference = np.bincount(owner, weights=gains * powers * dist ** (-link.alpha), minlength=size)
    return h_k, interference


def sample_model_field(
    link: LinkParams,
    P_k: float,
    size: int,
    rng: np.random.Generator,
    tail_tol: float = 2e-4,
    radius: float | None = None,
) -> tuple[np.ndarray, np.ndarray, LinkParams, float]:
    """Draw from the stochastic-geometry model whose success statistics the
    closed form in :func:`success_probability` describes exactly.

    The serving UE sits at the effective distance
    ``d_eff = (d^2 / (2 phi)^(alpha/2 - 1))^(1/alpha)``. Out-of-cell UEs form a
    PPP of density ``phi`` that is thinned with retention probability
    ``1 - exp(-(12 / 5 pi) r^2 / d^2)`` (near-gNB interferers are mostly
    associated elsewhere), each transmits at ``P_k (d / d_eff)^alpha`` and has
    unit-mean Rayleigh fading. The field is truncated at the radius where the
    analytic tail of the interference exponent drops below ``tail_tol``,
    or at ``radius`` when given (see :func:`far_field_log_laplace` for the
    exact contribution of the remainder).

    Returns
    -------
    h_k, interference : ndarray
        Serving fading gains and aggregate interference powers.
    link_eff : LinkParams
        ``link`` with ``d_k`` replaced by ``d_eff``; pass it to :func:`sinr_values`.
    radius : float
        Truncation radius used.
    """
    if link.phi_density <= 0:
        raise ValueError("the model field needs a positive gNB density")
    a = link.alpha
    d = link.d_k
    d_eff = (d**2 / (2.0 * link.phi_density) ** (a / 2.0 - 1.0)) ** (1.0 / a)
    link_eff = LinkParams(d_eff, a, link.theta, link.phi_density, link.W, link.N0)
    t2a = link.theta ** (2.0 / a)
    kappa = link.phi_density * math.pi * d**2 * t2a
    # tail of kappa * int_u^inf du / (1 + u^(a/2)) is below kappa u^(1-a/2) / (a/2-1)
    if radius is None:
        u_max = (tail_tol * (a / 2.0 - 1.0) / kappa) ** (1.0 / (1.0 - a / 2.0))
        radius = math.sqrt(u_max * d**2 * t2a)

    h_k = rng.exponential(size=size)
    counts = rng.poisson(link.phi_density * math.pi * radius**2, size=size)
    total = int(counts.sum())
    r = radius * np.sqrt(rng.random(total))
    keep = rng.random(total) < -np.expm1(-COVERAGE_CONSTANT * (r / d) ** 2)
    gains = rng.exponential(size=total)
    p_int = P_k * (d / d_eff) ** a
    owner = np.repeat(np.arange(size), counts)
    contrib = np.where(keep, gains * p_int * r ** (-a), 0.0)
    interference = np.bincount(owner, weights=contrib, minlength=size)
    return h_k, interference, link_eff, radius


def far_field_log_laplace(link: LinkParams, inner_radius: float) -> float:
    """Log success factor contributed by the model field beyond ``inner_radius``.

    For the field of :func:`sample_model_field`, an interferer at ``r``
    scaled by the serving link's threshold contributes ``theta (d/r)^alpha``,
    so the PPP Laplace functional gives

    ``-phi int_R^inf (1 - exp(-c r^2/d^2)) theta (d/r)^a / (1 + theta (d/r)^a) 2 pi r dr``.

    Evaluated by radial quadrature; ``inner_radius = 0`` recovers the full
    interference exponent (negated).
    """
    a, d, th = link.alpha, link.d_k, link.theta

    def f(r):
        x = th * (d / r) ** a
        return -math.expm1(-COVERAGE_CONSTANT * (r / d) ** 2) * x / (1.0 + x) * 2.0 * math.pi * r

    # split at a few multiples of d so quad sees the kernel's peak
    edges = [inner_radius] + [m * d for m in (1.0, 4.0, 16.0, 64.0) if m * d > inner_radius]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-12, limit=200)[0]
    total += integrate.quad(f, edges[-1], np.inf, epsabs=0.0, epsrel=1e-12, limit=200)[0]
    return -link.phi_density * total


def sinr_values(h_k, interference, P_k, delta, link: LinkParams):
    """Array form of :func:`sinr` on fading gains and aggregate interference."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise ValueError("zero bandwidth: delta must be positive")
    if np.any(np.asarray(P_k) <= 0):
        raise ValueError("transmit power must be positive")
    noise = link.W * delta * link.N0
    return np.asarray(h_k) * P_k * link.path_gain() / (np.asarray(interference) + noise)


def sinr(real: ChannelRealization, P_k: float, delta: float, link: LinkParams) -> float:
    """Instantaneous SINR of the serving link with noise ``W * delta * N0``."""
    if not delta > 0:
        raise ValueError("zero bandwidth: delta must be positive")
    if not P_k > 0:
        raise ValueError("transmit power must be positive")
    noise = link.W * delta * link.N0
    return real.h_k * P_k * link.path_gain() / (real.interference(link.alpha) + noise)


def success_indicator(sinr_value, theta):
    """1 when the SINR reaches the threshold (inclusive), else 0."""
    out = (np.asarray(sinr_value) >= theta).astype(int)
    return int(out) if out.ndim == 0 else out


def _tail_start(alpha: float, tol: float) -> float:
    # int_X^inf dx / (1 + x^(a/2)) < X^(1-a/2) / (a/2 - 1)
    s = alpha / 2.0 - 1.0
    try:
        return (tol * s) ** (-1.0 / s)
    except OverflowError:
        raise QuadratureError(f"tolerance {tol!r} needs an unbounded integration range") from None


@lru_cache(maxsize=256)
def interference_integral(theta: float, alpha: float, tol: float = J_ABS_TOL) -> float:
    """``J = int_0^inf (1 - exp(-(12/(5 pi)) theta^(2/alpha) x)) / (1 + x^(alpha/2)) dx``.

    Adaptive Gauss-Kronrod on geometrically growing panels of ``[0, X]``, where
    ``X`` makes the analytic tail bound smaller than ``tol / 2``; the panels
    share the remaining ``tol / 2`` absolute error budget.

    Raises
    ------
    QuadratureError
        If any panel fails to meet its tolerance.
    """
    if not alpha > 2:
        raise ValueError("alpha must exceed 2")
    c = COVERAGE_CONSTANT * theta ** (2.0 / alpha)
    half = alpha / 2.0

    def f(x):
        return -math.expm1(-c * x) / (1.0 + x**half)

    x_end = _tail_start(alpha, tol / 2.0)
    edges = [0.0, 1.0]
    while edges[-1] < x_end:
        edges.append(min(edges[-1] * 10.0, x_end))
    per_panel = tol / 2.0 / (len(edges) - 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, err, info = integrate.quad(f, lo, hi, epsabs=per_panel, epsrel=0.0, limit=200, full_output=True)[:3]
        if err > per_panel or "message" in info:
            raise QuadratureError(
                f"interference integral did not converge on [{lo:g}, {hi:g}]: "
                f"estimate={val!r} abs_err={err:.3g} budget={per_panel:.3g} "
                f"theta={theta!r} alpha={alpha!r} ({info.get('message', '')})"
            )
        total += val
    return total


def noise_exponent(P_k, delta, link: LinkParams):
    """``W delta N0 theta d^2 / (P (2 phi)^(alpha/2 - 1))``."""
    scale = (2.0 * link.phi_density) ** (link.alpha / 2.0 - 1.0)
    return link.W * np.asarray(delta) * link.N0 * link.theta * link.d_k**2 / (np.asarray(P_k) * scale)


def interference_exponent(link: LinkParams) -> float:
    """``phi pi d^2 theta^(2/alpha) J``; independent of power and bandwidth."""
    if link.phi_density == 0:
        return 0.0
    j = interference_integral(float(link.theta), float(link.alpha))
    return link.phi_density * math.pi * link.d_k**2 * link.theta ** (2.0 / link.alpha) * j


def success_probability(P_k, delta, link: LinkParams):
    """Closed-form uplink success probability under Rayleigh fading and a
    Poisson field of interferers.

    ``lambda = exp(-W delta N0 theta d^2 / (P (2 phi)^(alpha/2-1)) - phi pi d^2 theta^(2/alpha) J)``

    Broadcasts over ``P_k`` and ``delta``.
    """
    P = np.asarray(P_k, dtype=float)
    dl = np.asarray(delta, dtype=float)
    if np.any(P <= 0):
        raise ValueError("transmit power must be positive")
    if np.any(dl <= 0):
        raise ValueError("zero bandwidth: delta must be positive")
    if link.phi_density == 0:
        raise ValueError("success probability needs a positive gNB density")
    lam = np.exp(-noise_exponent(P, dl, link) - interference_exponent(link))
    return float(lam) if lam.ndim == 0 else lam
