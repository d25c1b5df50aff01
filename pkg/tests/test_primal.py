import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spendmax import DomainError, Regime
from conftest import make

# x_zero, x_modr, x_aggv, x_splg from the mpmath oracle (g = -v_y at the thresholds)
BOUNDS = {
    (0.5, 0.05, 1.0): (2.905624452963316, 7.32365059353429, 12.66610724859689,
                       18.21614767645142),
    (0.5, 0.05, 3.0): (3.231791464052993, 23.8630713706005, 49.44131514448271,
                       56.59324314036561),
    (0.2, 0.05, 2.0): (3.213992358084655, 7.016902879068404, 31.43841066631374,
                       34.71461834882124),
    (0.5, 0.06, 1.0): (2.077497953830316, 5.937977302560724, 10.71882638246716,
                       14.06566200976202),
    (0.5, 0.06, 2.0): (2.26829310299588, 13.04318713490817, 27.34782842655262,
                       32.12779402697177),
}


@pytest.mark.parametrize("key", sorted(BOUNDS))
def test_boundaries_against_oracle(key):
    lam, rho, h = key
    m = make(rho=rho, **{"lambda": lam})
    np.testing.assert_allclose(m.boundaries(h).as_tuple(), BOUNDS[key], rtol=1e-11)


def test_boundaries_coincide_at_zero(base):
    b = base.boundaries(0.0)
    assert b.x_zero == pytest.approx(b.x_modr, rel=1e-12)
    assert b.x_zero == pytest.approx(b.x_aggv, rel=1e-12)
    assert b.x_splg > b.x_aggv


@pytest.mark.parametrize("lam", [0.1, 0.5, 0.9])
def test_boundary_identities(lam):
    m = make(**{"lambda": lam})
    for h in (0.0, 0.3, 1.0, 4.0):
        a, b, s = m.dual.thresholds(h)
        bd = m.boundaries(h)
        for y, x in ((a, bd.x_zero), (1.0, bd.x_modr), (b, bd.x_aggv), (s, bd.x_splg)):
            assert m.g(float(y), h) == pytest.approx(x, rel=1e-10)


@settings(max_examples=300, deadline=None)
@given(h=st.floats(0.0, 6.0), frac=st.floats(0.0, 1.0))
def test_round_trip(base, h, frac):
    x = frac * float(base.x_splg(h))
    if x == 0.0:
        return
    y = base.f(x, h)
    assert abs(base.g(y, h) - x) < 1e-10 * (1 + x)


def test_f_decreasing_and_regimes(base):
    bd = base.boundaries(1.0)
    x = np.linspace(0.01, bd.x_splg, 400)
    f = base.f(x, 1.0)
    assert np.all(np.diff(f) < 0)
    e = base.evaluate(x, 1.0)
    expect = np.select([x < bd.x_zero, x < bd.x_aggv, x < bd.x_splg],
                       [Regime.ZERO_CONSUMPTION, Regime.INTERIOR, Regime.PEAK_TRACKING],
                       Regime.SINGULAR_BOUNDARY)
    inner = np.abs(x - bd.x_zero) > 1e-9
    inner &= np.abs(x - bd.x_aggv) > 1e-9
    assert np.all(e["regime"][inner] == expect[inner])


def test_policy_point(base):
    pt = base.policy(10.0, 1.0)
    assert pt.regime is Regime.INTERIOR
    assert pt.c == pytest.approx(0.7459115, abs=1e-6)
    assert pt.pi == pytest.approx(8.75567, abs=1e-5)
    assert pt.u == pytest.approx(-16.0624, abs=1e-4)
    assert pt.f == pytest.approx(0.781991, abs=1e-6)
    assert pt.c == pytest.approx(-math.log(pt.f) + 0.5, rel=1e-12)


def test_u_x_equals_f(base):
    for x in (1.0, 5.0, 10.0, 15.0):
        eps = 1e-5
        fd = (base.value_u(x + eps, 1.0) - base.value_u(x - eps, 1.0)) / (2 * eps)
        assert fd == pytest.approx(base.f(x, 1.0), rel=1e-7)


def test_value_at_zero_wealth(base):
    assert base.value_u(0.0, 1.0) == pytest.approx(-math.exp(0.5) / 0.05, rel=1e-14)
    assert base.policy(0.0, 1.0).c == 0.0


def test_controls_continuous_across_boundaries(base):
    bd = base.boundaries(1.0)
    for x in (bd.x_zero, bd.x_modr, bd.x_aggv):
        e = base.evaluate(np.array([x * (1 - 1e-9), x * (1 + 1e-9)]), 1.0)
        assert abs(e["c"][1] - e["c"][0]) < 1e-6
        assert abs(e["pi"][1] - e["pi"][0]) < 1e-5 * (1 + abs(e["pi"][0]))


def test_projection_lifts_reference(base):
    x = 25.0
    x2, h2, jumped = base.project_to_domain(x, 1.0)
    assert jumped and x2 == x
    assert base.x_splg(h2) == pytest.approx(x, rel=1e-12)
    assert base.h_tilde(x) == pytest.approx(h2)
    pt = base.policy(x, 1.0)
    assert pt.jumped and pt.h == pytest.approx(h2)
    assert pt.regime is Regime.SINGULAR_BOUNDARY
    assert pt.c == pytest.approx(h2, rel=1e-9)
    with pytest.raises(DomainError):
        base.h_tilde(1.0)


def test_boundaries_reject_negative_h(base):
    with pytest.raises(DomainError):
        base.boundaries(-0.1)


def test_lambda_zero_boundaries(lam0):
    b = lam0.boundaries(2.0)
    assert b.x_modr == b.x_zero
    assert math.isinf(b.x_aggv) and math.isinf(b.x_splg)
    # consumption is not capped by the reference
    assert lam0.policy(200.0, 2.0).c > 2.0


def test_lambda_one_subsistence(lam1):
    for h in (0.5, 1.0, 3.0):
        for x in (h / 0.05, 1.5 * h / 0.05):
            pt = lam1.policy(x, h)
            assert pt.regime is Regime.SUBSISTENCE
            assert pt.u == -1.0 / 0.05
            assert pt.pi == 0.0 and pt.c == h
    assert lam1.boundaries(1.0).x_splg == pytest.approx(20.0)


def test_asymptotic_limits(base, lam0, rho06):
    r, pi_lim = base.asymptotic_limits()
    k = base.constants
    assert r == 0.05
    assert pi_lim == pytest.approx(0.05 * 0.5 ** (k.r1 - 1) / (0.05 * 0.0625))
    with pytest.raises(DomainError):
        lam0.asymptotic_limits()
    with pytest.raises(DomainError):
        rho06.asymptotic_limits()


def test_asymptotics_along_singular_boundary(base):
    r, pi_lim = base.asymptotic_limits()
    for x in (1e4, 1e5, 1e6):
        h = base.h_tilde(x)
        pt = base.policy(x, h)
        assert abs(pt.c / x - r) / r < 0.01
        assert abs(pt.pi - pi_lim) / pi_lim < 0.01
