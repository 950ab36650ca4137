"""Real Lambert W function on the branches W0 and W-1.

Halley iteration from branch-specific initial guesses:

* near the branch point ``-1/e``: the series in ``p = sqrt(2(e*x + 1))``
  (``-1 + p - p^2/3 + 11 p^3/72`` on W0, the same with ``-p`` on W-1);
* small ``|x|`` on W0: ``x - x^2 + 1.5 x^3``;
* large ``x`` on W0 and ``x -> 0-`` on W-1: ``L1 - L2 + L2/L1`` with
  ``L1 = log(|x|)``, ``L2 = log(|L1|)``.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["lambert_w", "BRANCH_POINT"]

BRANCH_POINT = -math.exp(-1.0)

_MAX_ITER = 64


def _initial_guess(x: np.ndarray, branch: int) -> np.ndarray:
    w = np.empty_like(x)
    p = np.sqrt(np.maximum(2.0 * (math.e * x + 1.0), 0.0))
    if branch == 0:
        near = x < -0.25
        small = (~near) & (np.abs(x) <= 0.5)
        mid = (x > 0.5) & (x < 3.0)
        large = x >= 3.0
        w[near] = -1.0 + p[near] - p[near] ** 2 / 3.0 + 11.0 / 72.0 * p[near] ** 3
        xs = x[small]
        w[small] = xs - xs**2 + 1.5 * xs**3
        w[mid] = np.log1p(x[mid]) * 0.75
        l1 = np.log(x[large])
        l2 = np.log(l1)
        w[large] = l1 - l2 + l2 / l1
    else:
        near = x < -0.25
        far = ~near
        w[near] = -1.0 - p[near] - p[near] ** 2 / 3.0 - 11.0 / 72.0 * p[near] ** 3
        l1 = np.log(-x[far])
        l2 = np.log(-l1)
        w[far] = l1 - l2 + l2 / l1
    return w


def _halley(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    active = np.ones(x.shape, dtype=bool)
    for _ in range(_MAX_ITER):
        if not active.any():
            break
        wa = w[active]
        ew = np.exp(wa)
        f = wa * ew - x[active]
        wp1 = wa + 1.0
        # w == -1 only at the branch point, which is handled before iterating
        denom = ew * wp1 - (wa + 2.0) * f / (2.0 * wp1)
        step = f / denom
        w[active] = wa - step
        done = np.abs(step) <= 4e-16 * (1.0 + np.abs(wa))
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return w


def lambert_w(x, branch: int = 0):
    """Evaluate the real Lambert W function, ``w * exp(w) = x``.

    Parameters
    ----------
    x : float or array_like
        Argument. Must satisfy ``x >= -1/e``; on branch ``-1`` additionally
        ``x < 0``.
    branch : {0, -1}
        ``0`` is the principal branch (``w >= -1``), ``-1`` the lower branch
        (``w <= -1``).

    Returns
    -------
    float or ndarray
        Matches the shape of ``x``; a Python float for scalar input.

    Raises
    ------
    ValueError
        If any argument lies outside the branch domain.
    """
    if branch not in (0, -1):
        raise ValueError(f"unsupported branch {branch!r}; use 0 or -1")
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    xa = np.atleast_1d(arr).astype(float).copy()
    if np.any(np.isnan(xa)):
        raise ValueError("lambert_w argument is NaN")
    # tolerate round-off in callers that compute -1/e themselves
    if np.any(xa < BRANCH_POINT - 4e-17):
        raise ValueError(f"lambert_w domain error: x < -1/e (min x = {xa.min()!r})")
    if branch == -1 and np.any(xa >= 0.0):
        raise ValueError("lambert_w branch -1 requires -1/e <= x < 0")
    xa = np.maximum(xa, BRANCH_POINT)

    out = np.empty_like(xa)
    at_bp = xa <= BRANCH_POINT
    zero = xa == 0.0
    out[at_bp] = -1.0
    out[zero] = 0.0
    rest = ~(at_bp | zero)
    if rest.any():
        xr = xa[rest]
        out[rest] = _halley(xr, _initial_guess(xr, branch))
    if scalar:
        return float(out[0])
    return out.reshape(arr.shape)
