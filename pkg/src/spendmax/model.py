"""Model parameters, derived constants and the exponential utility.

Wealth is invested in a riskless asset with rate ``r`` and one risky asset
with drift ``mu`` and volatility ``sigma``.  The agent discounts at ``rho``,
has absolute risk aversion ``beta``, and is penalised through the gap
``c - lambda * H`` between consumption and its historical peak ``H``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import DomainError

SNAP_TOL = 1e-12


class LambdaCase(enum.Enum):
    INTERIOR = "LambdaInterior"
    ZERO = "LambdaZero"
    ONE = "LambdaOne"


class RhoCase(enum.Enum):
    EQUAL = "RhoEqualsR"
    GENERAL = "RhoGeneral"


@dataclass(frozen=True)
class ModelParams:
    """Validated market and preference constants.

    Build through :func:`validate_params`, which snaps near-extreme values of
    ``lam`` and ``rho`` onto their exact branches and assigns ``case_tag``.
    """

    r: float
    rho: float
    mu: float
    sigma: float
    beta: float
    lam: float
    case_tag: tuple[LambdaCase, RhoCase] = field(
        default=(LambdaCase.INTERIOR, RhoCase.EQUAL), compare=False
    )

    @property
    def lambda_case(self) -> LambdaCase:
        return self.case_tag[0]

    @property
    def rho_case(self) -> RhoCase:
        return self.case_tag[1]

    def as_dict(self) -> dict[str, float]:
        return {"r": self.r, "rho": self.rho, "mu": self.mu,
                "sigma": self.sigma, "beta": self.beta, "lambda": self.lam}

    def replace(self, **changes) -> "ModelParams":
        raw = self.as_dict()
        for k, val in changes.items():
            raw["lambda" if k == "lam" else k] = val
        return validate_params(raw)


@dataclass(frozen=True)
class DerivedConstants:
    """Sharpe ratio and the two roots of the characteristic quadratic."""

    kappa: float
    r1: float
    r2: float


def _get(raw: Any, key: str, *alts: str):
    for k in (key, *alts):
        if isinstance(raw, Mapping):
            if k in raw:
                return raw[k]
        elif hasattr(raw, k):
            return getattr(raw, k)
    return None


def validate_params(raw: Mapping[str, float] | Any = None, **kwargs) -> ModelParams:
    """Check the standing assumptions and build a :class:`ModelParams`.

    Parameters
    ----------
    raw : mapping or object, optional
        Record with keys ``r, rho, mu, sigma, beta, lambda`` (``lam`` is also
        accepted).  Missing ``rho`` defaults to ``r``.
    **kwargs
        Same keys given directly; they override ``raw``.

    Returns
    -------
    ModelParams

    Raises
    ------
    DomainError
        Naming the first violated constraint.
    """
    merged: dict[str, Any] = {}
    for key, alts in (("r", ()), ("rho", ()), ("mu", ()), ("sigma", ()),
                      ("beta", ()), ("lambda", ("lam",))):
        val = kwargs.get(key)
        if val is None:
            val = next((kwargs[a] for a in alts if a in kwargs), None)
        if val is None and raw is not None:
            val = _get(raw, key, *alts)
        merged[key] = val
    if merged["rho"] is None:
        merged["rho"] = merged["r"]
    for key, val in merged.items():
        if val is None:
            raise DomainError(f"missing parameter {key}")
        try:
            merged[key] = float(val)
        except (TypeError, ValueError) as exc:
            raise DomainError(f"parameter {key} is not a number: {val!r}") from exc
        if not math.isfinite(merged[key]):
            raise DomainError(f"parameter {key} must be finite")

    r, rho, mu = merged["r"], merged["rho"], merged["mu"]
    sigma, beta, lam = merged["sigma"], merged["beta"], merged["lambda"]
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    if beta <= 0:
        raise DomainError("beta must be positive")
    if r <= 0:
        raise DomainError("r must be positive")
    if mu <= r:
        raise DomainError("mu must exceed r")
    if lam < -SNAP_TOL or lam > 1 + SNAP_TOL:
        raise DomainError("lambda must lie in [0, 1]")

    if abs(lam) <= SNAP_TOL:
        lam, lcase = 0.0, LambdaCase.ZERO
    elif abs(lam - 1.0) <= SNAP_TOL:
        lam, lcase = 1.0, LambdaCase.ONE
    else:
        lcase = LambdaCase.INTERIOR

    if abs(rho - r) <= SNAP_TOL:
        rho, rcase = r, RhoCase.EQUAL
    else:
        rcase = RhoCase.GENERAL
        if rho <= 0:
            raise DomainError("rho must be positive when rho != r")
        if lcase is not LambdaCase.INTERIOR:
            raise DomainError("rho != r is only supported for 0 < lambda < 1")

    return ModelParams(r=r, rho=rho, mu=mu, sigma=sigma, beta=beta, lam=lam,
                       case_tag=(lcase, rcase))


def _stable_roots(a2: float, a1: float, a0: float) -> tuple[float, float]:
    # a2 z^2 + a1 z + a0 = 0 with a2 > 0, a0 < 0: real roots of opposite sign
    disc = math.sqrt(a1 * a1 - 4.0 * a2 * a0)
    q = -0.5 * (a1 + math.copysign(disc, a1)) if a1 != 0 else 0.5 * disc
    z_big = q / a2
    z_small = a0 / q
    return max(z_big, z_small), min(z_big, z_small)


def derive_constants(p: ModelParams) -> DerivedConstants:
    """Sharpe ratio ``kappa`` and the roots ``r1 > 1 > 0 > r2``.

    For ``rho == r`` the roots solve ``z**2 - z - 2r/kappa**2 = 0``; otherwise
    ``(kappa**2/2) z**2 + (rho - r - kappa**2/2) z - rho = 0``.
    """
    kappa = (p.mu - p.r) / p.sigma
    k2 = 0.5 * kappa * kappa
    if p.rho_case is RhoCase.EQUAL:
        r1, r2 = _stable_roots(1.0, -1.0, -p.r / k2)
    else:
        r1, r2 = _stable_roots(k2, p.rho - p.r - k2, -p.rho)
    return DerivedConstants(kappa=kappa, r1=r1, r2=r2)


def utility(x, beta: float):
    """Exponential utility ``-exp(-beta x)/beta``; accepts scalars or arrays."""
    out = -np.exp(-beta * np.asarray(x, dtype=float)) / beta
    return float(out) if out.ndim == 0 else out
