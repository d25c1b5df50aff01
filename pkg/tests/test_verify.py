import json
import math

import numpy as np
import pytest
from scipy import integrate

from spendmax import (DomainError, DualSolution, GridError, PrimalSolution,
                      StencilError, validate_params)
from spendmax.dual import _region_forms
from spendmax import verify
from conftest import BASE, make


def mutated(name):
    d = DualSolution(validate_params(BASE))
    d._sums[name] = d._sums[name].scaled(-1.0)
    d._forms = _region_forms(d.params, d.constants, d._sums)
    return PrimalSolution(d)


def failing(report):
    return {c["name"] for c in report["checks"] if not c["pass"]}


# ------------------------------------------------------------------ BVP
@pytest.mark.parametrize("lam, rho, h", [(0.5, 0.05, 1.0), (0.5, 0.05, 5.0),
                                        (0.0, 0.05, 1.0), (1.0, 0.05, 1.0),
                                        (0.5, 0.06, 1.0)])
def test_bvp_oracle(lam, rho, h):
    rep = verify.bvp_oracle(make(rho=rho, **{"lambda": lam}), h)
    assert rep.max_rel_dev < 1e-5
    assert abs(rep.order - 2.0) < 0.3


def test_bvp_oracle_grid_guard(base):
    with pytest.raises(GridError):
        verify.bvp_oracle(base, 1.0, n=100)
    with pytest.raises(GridError):
        verify.bvp_oracle(base, 1.0, y_max_factor=2.0)


def test_bvp_oracle_detects_wrong_coefficient():
    assert verify.bvp_oracle(mutated("c3"), 1.0).max_rel_dev > 1e-3


# ------------------------------------------------------------------ HJB
@pytest.mark.parametrize("x", [1.0, 5.0, 10.0, 15.0, 18.0])
def test_hjb_residual_small(base, x):
    res = verify.hjb_residual_primal(base, x, 1.0)
    assert abs(res.residual) < 1e-5
    assert res.c_star == pytest.approx(base.policy(x, 1.0).c, abs=1e-9)


def test_hjb_residual_reacts_to_scaled_value(base):
    ok = verify.hjb_residual_primal(base, 10.0, 1.0)
    bad = verify.hjb_residual_primal(base, 10.0, 1.0, u_scale=1.001)
    assert abs(bad.residual - ok.residual) == pytest.approx(0.001 * 0.05 * abs(ok.u), rel=1e-4)


def test_hjb_residual_lambda_zero_and_one(lam0, lam1):
    for x in (1.0, 30.0):
        assert abs(verify.hjb_residual_primal(lam0, x, 1.0).residual) < 1e-5
    for x in (5.0, 15.0, 25.0):
        assert abs(verify.hjb_residual_primal(lam1, x, 1.0).residual) < 1e-5


def test_hjb_stencil_and_domain_errors(base):
    xz = float(base.boundaries(1.0).x_zero)
    with pytest.raises(StencilError):
        verify.hjb_residual_primal(base, xz, 1.0, delta=1e-3)
    with pytest.raises(DomainError):
        verify.hjb_residual_primal(base, 30.0, 1.0)


# ------------------------------------------------------------------ scan
@pytest.mark.parametrize("lam", [0.0, 0.01, 0.1, 0.5, 0.9, 0.98, 1.0])
def test_scan_passes(lam):
    rep = verify.scan_report(make(**{"lambda": lam}))
    assert rep["schema"] == verify.SCAN_SCHEMA
    assert rep["passed"], failing(rep)
    json.dumps(rep)


def test_scan_rho_general(rho06):
    grid = verify.ScanGrid(h_values=tuple(np.linspace(1.0, 4.0, 10)))
    assert verify.scan_report(rho06, grid)["passed"]


def test_scan_records_shape(base):
    rep = verify.scan_report(base)
    for rec in rep["checks"]:
        assert set(rec) == {"name", "grid_point", "value", "tolerance", "pass"}
    names = {c["name"] for c in rep["checks"]}
    assert {"dual_ode_residual", "smooth_fit_value", "smooth_fit_slope",
            "convexity_min_v_yy", "free_boundary_v_h", "inversion_round_trip",
            "boundary_identities", "hjb_residual"} <= names


def test_scan_flags_flipped_mid_coefficient():
    # flipping C3 keeps v convex, but breaks pasting and the primal checks
    bad = failing(verify.scan_report(mutated("c3")))
    assert "smooth_fit_value" in bad
    assert "hjb_residual" in bad
    assert "convexity_min_v_yy" not in bad


def test_scan_flags_flipped_top_coefficient():
    bad = failing(verify.scan_report(mutated("c2")))
    assert "convexity_min_v_yy" in bad
    assert "smooth_fit_value" in bad


# ------------------------------------------------------- Brownian maximum
def test_brownian_max_reduces_to_reflection():
    for zeta, k, T in ((0.3, 1.0, 2.0), (-0.2, 0.5, 1.0), (0.05, 2.0, 3.0), (1.0, 0.1, 0.5)):
        assert abs(verify.brownian_max_formula(0.0, 0.0, zeta, k, T)
                   - verify.reflection_cdf(zeta, k, T)) < 1e-12


@pytest.mark.parametrize("args", [(1.0, 0.5, 0.1, 1.0, 1.0), (-0.5, 0.3, -0.2, 2.0, 3.0),
                                  (0.0, 0.0, 0.3, 1.0, 2.0)])
def test_brownian_max_against_quadrature(args):
    a, b, zeta, k, T = args

    def dens(x, m):
        # joint density of (B_T, M_T) for driftless BM, reweighted to drift zeta
        base = 2 * (2 * m - x) / (T * math.sqrt(2 * math.pi * T)) \
            * math.exp(-(2 * m - x) ** 2 / (2 * T))
        return math.exp(a * x + b * m) * base * math.exp(zeta * x - 0.5 * zeta * zeta * T)

    ref, _ = integrate.dblquad(dens, 0.0, k, lambda m: -40.0, lambda m: m, epsabs=1e-13)
    assert verify.brownian_max_formula(a, b, zeta, k, T) == pytest.approx(ref, rel=1e-8)


def test_brownian_max_mc_small():
    est, se = verify.brownian_max_mc(1.0, 0.5, 0.1, 1.0, 1.0, n_paths=10 ** 5, seed=2)
    assert abs(est - verify.brownian_max_formula(1.0, 0.5, 0.1, 1.0, 1.0)) < 4 * se


def test_brownian_max_decays_under_conditions():
    # a (a + 2 zeta) < 0 and (a + b)(a + b + 2 zeta) < 0 give a zero limit
    vals = [verify.brownian_max_formula(-0.1, 0.05, 0.2, 1.0, T) for T in (10, 50, 200)]
    assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-2


def test_brownian_max_domain():
    with pytest.raises(DomainError):
        verify.brownian_max_formula(-0.5, 1.0, 0.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        verify.brownian_max_formula(0.0, 0.0, 0.1, -1.0, 1.0)


@pytest.mark.parametrize("name", ["c2", "c3", "c4", "c5", "c6"])
def test_scan_fails_for_any_flipped_coefficient(name):
    rep = verify.scan_report(mutated(name))
    assert not rep["passed"]
    assert "smooth_fit_value" in failing(rep)
