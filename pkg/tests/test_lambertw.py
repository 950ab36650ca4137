import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedswitch.lambertw import BRANCH_POINT, lambert_w


def bisect(f, lo, hi, tol=1e-15):
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def test_w_of_one():
    ref = bisect(lambda w: w * math.exp(w) - 1.0, 0.0, 1.0)
    assert abs(lambert_w(1.0) - ref) <= 1e-9
    assert lambert_w(1.0) == pytest.approx(0.5671432904, abs=1e-9)


def test_special_points():
    assert lambert_w(0.0) == 0.0
    assert lambert_w(BRANCH_POINT) == -1.0
    assert lambert_w(BRANCH_POINT, -1) == -1.0
    assert lambert_w(math.e) == pytest.approx(1.0, rel=1e-15)
    assert lambert_w(-math.log(2) / 2, -1) == pytest.approx(-math.log(4), rel=1e-14)


@pytest.mark.parametrize("x", [-0.3678, -0.3, -0.1, 1e-8, 0.3, 2.0, 10.0, 1e3, 1e6, 1e100])
def test_principal_vs_mpmath(x):
    assert lambert_w(x) == pytest.approx(float(mpmath.lambertw(x, 0).real), rel=1e-14, abs=1e-300)


@pytest.mark.parametrize("x", [-0.3678, -0.3, -0.1, -1e-3, -1e-10, -1e-200])
def test_lower_branch_vs_mpmath(x):
    assert lambert_w(x, -1) == pytest.approx(float(mpmath.lambertw(x, -1).real), rel=1e-14)


def test_vectorised_shape():
    x = np.linspace(BRANCH_POINT + 1e-6, 5.0, 12).reshape(3, 4)
    w = lambert_w(x)
    assert w.shape == (3, 4)
    np.testing.assert_allclose(w * np.exp(w), x, rtol=1e-13)
    assert isinstance(lambert_w(0.5), float)


def test_domain_errors():
    with pytest.raises(ValueError):
        lambert_w(-0.5)
    with pytest.raises(ValueError):
        lambert_w(0.1, -1)
    with pytest.raises(ValueError):
        lambert_w(0.0, -1)
    with pytest.raises(ValueError):
        lambert_w(1.0, 1)
    with pytest.raises(ValueError):
        lambert_w(float("nan"))


@settings(max_examples=300, deadline=None)
@given(st.floats(BRANCH_POINT + 1e-12, 1e300))
def test_principal_residual(x):
    w = lambert_w(x)
    assert w >= -1.0
    if x != 0:
        assert abs(w * math.exp(w) - x) <= 1e-12 * abs(x) + 1e-15 * math.exp(w) * abs(w + 1)


@settings(max_examples=300, deadline=None)
@given(st.floats(BRANCH_POINT + 1e-12, -1e-300))
def test_lower_residual(x):
    w = lambert_w(x, -1)
    assert w <= -1.0
    assert abs(w * math.exp(w) - x) <= 1e-12 * abs(x) + 1e-15 * math.exp(w) * abs(w + 1)
