import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spendmax import (DomainError, LambdaCase, RhoCase, derive_constants, utility,
                      validate_params)
from conftest import BASE


def test_baseline_cases():
    p = validate_params(BASE)
    assert p.rho == p.r
    assert p.case_tag == (LambdaCase.INTERIOR, RhoCase.EQUAL)


@pytest.mark.parametrize("change, message", [
    ({"sigma": 0.0}, "sigma"),
    ({"beta": -1.0}, "beta"),
    ({"r": 0.0}, "r must"),
    ({"mu": 0.05}, "mu must exceed r"),
    ({"lambda": 1.2}, "lambda"),
    ({"lambda": -0.1}, "lambda"),
    ({"rho": -0.01}, "rho"),
    ({"mu": float("nan")}, "finite"),
    ({"mu": "abc"}, "not a number"),
])
def test_invalid_parameters_are_named(change, message):
    raw = dict(BASE, **change)
    with pytest.raises(DomainError, match=message):
        validate_params(raw)


def test_missing_parameter():
    raw = dict(BASE)
    del raw["sigma"]
    with pytest.raises(DomainError, match="missing parameter sigma"):
        validate_params(raw)


def test_snapping_to_exact_branches():
    p = validate_params(BASE, **{"lambda": 1e-14, "rho": 0.05 + 1e-14})
    assert p.lam == 0.0 and p.lambda_case is LambdaCase.ZERO
    assert p.rho == p.r and p.rho_case is RhoCase.EQUAL
    p = validate_params(BASE, lam=1 - 1e-13)
    assert p.lam == 1.0 and p.lambda_case is LambdaCase.ONE


def test_rho_general_needs_interior_lambda():
    assert validate_params(BASE, rho=0.06).rho_case is RhoCase.GENERAL
    with pytest.raises(DomainError, match="rho != r"):
        validate_params(BASE, rho=0.06, **{"lambda": 1.0})


def test_replace_revalidates():
    p = validate_params(BASE)
    assert p.replace(lam=0.2).lam == 0.2
    with pytest.raises(DomainError):
        p.replace(mu=0.01)


def test_roots_against_mpmath():
    mp.mp.dps = 30
    for rho in (0.05, 0.06, 0.02):
        p = validate_params(BASE, rho=rho)
        k = derive_constants(p)
        kap = mp.mpf("0.2")
        a, b, c = kap ** 2 / 2, mp.mpf(rho) - mp.mpf("0.05") - kap ** 2 / 2, -mp.mpf(rho)
        d = mp.sqrt(b * b - 4 * a * c)
        assert k.kappa == pytest.approx(0.2, rel=1e-15)
        assert k.r1 == pytest.approx(float((-b + d) / (2 * a)), rel=1e-14)
        assert k.r2 == pytest.approx(float((-b - d) / (2 * a)), rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(r=st.floats(0.005, 0.2), excess=st.floats(1e-3, 0.5), sigma=st.floats(0.05, 1.0),
       rho_shift=st.floats(-0.004, 0.1))
def test_roots_solve_quadratic(r, excess, sigma, rho_shift):
    rho = r + rho_shift
    p = validate_params(r=r, mu=r + excess, sigma=sigma, beta=1, lam=0.5, rho=rho)
    k = derive_constants(p)
    assert k.r1 > 1 and k.r2 < 0
    half = 0.5 * k.kappa ** 2
    for z in (k.r1, k.r2):
        res = half * z * z + (p.rho - p.r - half) * z - p.rho
        assert abs(res) <= 1e-12 * (half * z * z + p.rho + abs(p.rho - p.r - half) * abs(z))


def test_utility():
    assert utility(0.0, 2.0) == -0.5
    np.testing.assert_allclose(utility(np.array([1.0, -1.0]), 1.0),
                               [-math.exp(-1.0), -math.e])
