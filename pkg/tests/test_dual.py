import math

import numpy as np
import pytest

from spendmax import DomainError, DualSolution, Regime, validate_params
from conftest import BASE, make

# 40-digit mpmath evaluation of the coefficient formulas
ORACLE = {
    # (lambda, rho, h): (C2, C3, C4, C5, C6), v at y = 0.35, 0.7, 1.5, 3
    (0.5, 0.05, 1.0): ((7.380492779725167, -2.91731690434327, -0.8398689730174042,
                        6.373037681640644, 0.1097464651903645),
                       (-18.09920272930599, -23.01396448644672, -28.36026963238618,
                        -30.90699978202696)),
    (0.5, 0.05, 3.0): ((71.06117281307757, -0.9160832174486536, -0.09852470983502755,
                        28.66955700038779, 0.01117477877709756),
                       (-22.47618834279599, -34.96661161744032, -53.09548008788775,
                        -69.92182461051639)),
    (0.2, 0.05, 2.0): ((6.578947207051979, -3.275582005836092, -0.04560631982234943,
                        29.94336331491627, 0.04279734853680888),
                       (-14.84243557684377, -20.57930225366189, -25.72321926177786,
                        -27.99359748327828)),
    (0.5, 0.06, 1.0): ((4.834120234862019, -4.332361855090238, -0.4844976050798361,
                        7.444218649910676, -0.04791886700716523),
                       (-16.42834945440341, -20.54357137948707, -24.84758802271834,
                        -26.54836097203794)),
    (0.5, 0.06, 2.0): ((18.4223113522351, -2.62771029408173, -0.1414889688368619,
                        16.78858848062573, -0.01640706617187315),
                       (-18.15395908369179, -26.12261534989807, -35.82541175796849,
                        -41.75932166821474)),
}


@pytest.mark.parametrize("key", sorted(ORACLE))
def test_coefficients_and_value_against_oracle(key):
    lam, rho, h = key
    coefs, values = ORACLE[key]
    d = make(rho=rho, **{"lambda": lam}).dual
    np.testing.assert_allclose(d.coefficients(h).as_tuple(), coefs, rtol=1e-12)
    np.testing.assert_allclose(d.v(np.array([0.35, 0.7, 1.5, 3.0]), h), values, rtol=1e-12)


def test_thresholds(base):
    a, b, s = base.dual.thresholds(1.0)
    assert a == pytest.approx(math.exp(0.5))
    assert b == pytest.approx(math.exp(-0.5))
    assert s == pytest.approx(0.5 * math.exp(-0.5))


def test_classify(base):
    d = base.dual
    a, b, s = d.thresholds(1.0)
    assert d.classify(a * 1.01, 1.0) is Regime.ZERO_CONSUMPTION
    assert d.classify(1.0, 1.0) is Regime.INTERIOR
    assert d.classify(b * 0.99, 1.0) is Regime.PEAK_TRACKING
    assert d.classify(s, 1.0) is Regime.SINGULAR_BOUNDARY
    assert d.classify(s * 0.9, 1.0) is Regime.BELOW_DOMAIN
    with pytest.raises(DomainError):
        d.v(s * 0.9, 1.0)
    with pytest.raises(DomainError):
        d.v(-1.0, 1.0)
    with pytest.raises(DomainError):
        d.v(1.0, -1.0)


def _grid(d, h, n=100):
    la, lb, ls = (float(t) for t in d.log_thresholds(h))
    lo = ls if math.isfinite(ls) else min(la, lb if math.isfinite(lb) else la) - 3
    return np.exp(np.linspace(lo, la + 3, n))


@pytest.mark.parametrize("lam", [0.0, 0.1, 0.5, 0.9, 1.0])
def test_ode_residual(lam):
    d = make(**{"lambda": lam}).dual
    for h in np.linspace(0, 5, 20):
        y = _grid(d, h)
        res = d.dual_ode_residual(y, h)
        assert np.all(np.abs(res) < 1e-9 * (1 + np.abs(d.v(y, h))))


def test_ode_residual_rho_general(rho06):
    d = rho06.dual
    for h in np.linspace(1, 5, 20):
        y = _grid(d, h)
        assert np.all(np.abs(d.dual_ode_residual(y, h)) < 1e-9 * (1 + np.abs(d.v(y, h))))


@pytest.mark.parametrize("lam", [0.1, 0.5, 0.9])
def test_smooth_fit(lam):
    d = make(**{"lambda": lam}).dual
    for h in (0.0, 0.5, 2.0, 5.0):
        la, lb, _ = d.log_thresholds(h)
        for reg_hi, reg_lo, ly in ((0, 1, la), (1, 2, lb)):
            y = math.exp(float(ly))
            for k in (0, 1):
                lhs, rhs = d.branch(reg_hi, y, h, k), d.branch(reg_lo, y, h, k)
                assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs))


@pytest.mark.parametrize("lam", [0.1, 0.5, 0.9])
def test_free_boundary_condition(lam):
    d = make(**{"lambda": lam}).dual
    for h in (0.1, 1.0, 5.0):
        _, _, s = d.thresholds(h)
        assert abs(d.v_h(float(s), h)) < 1e-5


def test_v_h_nonzero_inside(base):
    # the free-boundary condition only holds on the singular set
    assert abs(base.dual.v_h(1.0, 1.0)) > 1e-2


def test_convexity(base):
    d = base.dual
    for h in np.linspace(0, 5, 20):
        assert np.all(d.v_yy(_grid(d, h), h) > 0)


def test_derivatives_match_finite_differences(base):
    d = base.dual
    for y in (0.4, 0.9, 1.3, 3.0):
        eps = 1e-6 * y
        fd1 = (d.v(y + eps, 1.0) - d.v(y - eps, 1.0)) / (2 * eps)
        fd2 = (d.v_y(y + eps, 1.0) - d.v_y(y - eps, 1.0)) / (2 * eps)
        assert d.v_y(y, 1.0) == pytest.approx(fd1, rel=1e-7)
        assert d.v_yy(y, 1.0) == pytest.approx(fd2, rel=1e-6)


def test_large_h_stays_finite(base):
    d = base.dual
    _, _, s = d.thresholds(200.0)
    y = np.array([s * 1.5, 1.0, math.exp(100) * 2])
    assert np.all(np.isfinite(d.v(y, 200.0)))


def test_lambda_zero_has_two_regions(lam0):
    d = lam0.dual
    c = d.coefficients(2.0)
    assert math.isnan(c.c4) and math.isnan(c.c5) and math.isnan(c.c6)
    # no reference dependence at all
    assert d.v(0.5, 0.0) == pytest.approx(d.v(0.5, 3.0), rel=1e-14)


def test_rho_general_needs_flag():
    p = validate_params(BASE, rho=0.06)
    with pytest.raises(DomainError, match="allow_rho_general"):
        DualSolution(p)
    with pytest.raises(DomainError, match="not convex"):
        DualSolution(p, allow_rho_general=True)
    DualSolution(p, allow_rho_general=True, convexity_probe=(1.0, 5.0))
