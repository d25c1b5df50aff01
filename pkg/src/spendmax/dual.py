"""Closed-form dual value function v(y, h).

The dual variable ``y`` is the marginal utility of wealth.  For fixed ``h``
the positive half-line splits into three regions separated by

    a = exp(lam*beta*h)          (consumption switches on)
    b = exp((lam-1)*beta*h)      (consumption reaches the peak h)
    s = (1-lam)*b                (consumption pushes the peak upward)

and on each region v is a combination of y**r1, y**r2 and an explicit
particular solution.  Every power coefficient is a short sum of
exponentials ``amp * exp(rate*beta*h)``; keeping that representation lets
``coef * y**p`` be evaluated as one ``exp`` of a combined exponent, which
stays finite for large ``h`` where the individual factors overflow.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .model import (DerivedConstants, LambdaCase, ModelParams, RhoCase,
                    derive_constants)

TIE_TOL = 1e-14


class Regime(enum.IntEnum):
    ZERO_CONSUMPTION = 0
    INTERIOR = 1
    PEAK_TRACKING = 2
    SINGULAR_BOUNDARY = 3
    BELOW_DOMAIN = 4
    # primal-only tag for lambda = 1 with x >= h/r (consumption pinned at h)
    SUBSISTENCE = 5

    @property
    def label(self) -> str:
        return "".join(w.capitalize() for w in self.name.split("_"))


@dataclass(frozen=True)
class ExpSum:
    """``sum(amp * exp(rate * beta * h))`` as a function of h."""

    amps: tuple[float, ...]
    rates: tuple[float, ...]

    def __call__(self, h, beta: float):
        h = np.asarray(h, dtype=float)
        out = np.zeros_like(h)
        for a, k in zip(self.amps, self.rates):
            out = out + a * np.exp(k * beta * h)
        return out

    def __add__(self, other: "ExpSum") -> "ExpSum":
        # merge equal rates so each exponential appears once
        amps, rates = list(self.amps), list(self.rates)
        for a, k in zip(other.amps, other.rates):
            if k in rates:
                amps[rates.index(k)] += a
            else:
                amps.append(a)
                rates.append(k)
        return ExpSum(tuple(amps), tuple(rates))

    def scaled(self, c: float) -> "ExpSum":
        return ExpSum(tuple(c * a for a in self.amps), self.rates)


EMPTY = ExpSum((), ())


@dataclass(frozen=True)
class RegionForm:
    """v = sum_p C_p(h) y**p + alpha*y*ln(y) + (b0 + b1*h)*y + k0*exp(kr*beta*h)."""

    powers: tuple[tuple[float, ExpSum], ...]
    alpha: float = 0.0
    b0: float = 0.0
    b1: float = 0.0
    k0: float = 0.0
    kr: float = 0.0


@dataclass(frozen=True)
class DualCoefficients:
    """Coefficients C2..C6 at one reference level (nan where unused)."""

    c2: float
    c3: float
    c4: float
    c5: float
    c6: float

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.c2, self.c3, self.c4, self.c5, self.c6)


def _coefficient_sums(p: ModelParams, k: DerivedConstants) -> dict[str, ExpSum]:
    """Exponential-sum representation of C2..C6 for the active case."""
    r, rho, beta, lam = p.r, p.rho, p.beta, p.lam
    r1, r2 = k.r1, k.r2
    half_k2 = 0.5 * k.kappa ** 2
    d = r1 - r2
    # the smooth-fit system at both thresholds only involves these two numbers
    pp = ((half_k2 + rho - r) / r - 1.0) / (r * beta) + 1.0 / (rho * beta)
    qq = (half_k2 + rho - r) / (r * r * beta)
    al3 = (r2 * pp - qq) / d
    dc = (r1 * pp - qq) / d
    ale = (qq - r2 * pp) / d
    fc = (r1 * pp - qq) / d

    if p.lambda_case is LambdaCase.ZERO:
        return {"c2": ExpSum((dc,), (0.0,)), "c3": ExpSum((al3,), (0.0,)),
                "c4": EMPTY, "c5": EMPTY, "c6": EMPTY}

    c3 = ExpSum((al3,), (lam * (1 - r1),))
    c5 = c3 + ExpSum((ale,), ((lam - 1) * (1 - r1),))
    f_sum = ExpSum((fc,), ((lam - 1) * (1 - r2),))
    d_sum = ExpSum((dc,), (lam * (1 - r2),))
    if p.lambda_case is LambdaCase.ONE:
        c6 = EMPTY
    else:
        e1 = lam * (1 - r2) - d
        e2 = (lam - 1) * (1 - r2)
        w = (1 - lam) ** d
        k1 = -w * al3 * lam * (1 - r1) * beta
        k2 = -w * ale * (lam - 1) * (1 - r1) * beta \
            - (1 - lam) ** (1 - r2) * (1.0 / rho - 1.0 / r)
        c6 = ExpSum((k1 / (e1 * beta), k2 / (e2 * beta)), (e1, e2))
    c4 = c6 + f_sum.scaled(-1.0)
    c2 = c4 + d_sum
    return {"c2": c2, "c3": c3, "c4": c4, "c5": c5, "c6": c6}


def _region_forms(p: ModelParams, k: DerivedConstants,
                  cs: dict[str, ExpSum]) -> tuple[RegionForm, ...]:
    r, rho, beta, lam = p.r, p.rho, p.beta, p.lam
    half_k2 = 0.5 * k.kappa ** 2
    top = RegionForm(((k.r2, cs["c2"]),), k0=-1.0 / (rho * beta), kr=lam)
    mid = RegionForm(((k.r1, cs["c3"]), (k.r2, cs["c4"])),
                     alpha=1.0 / (r * beta),
                     b0=((half_k2 + rho - r) / r - 1.0) / (r * beta),
                     b1=-lam / r)
    low = RegionForm(((k.r1, cs["c5"]), (k.r2, cs["c6"])),
                     b1=-1.0 / r, k0=-1.0 / (rho * beta), kr=lam - 1.0)
    return top, mid, low


def _falling(p: float, d: int) -> float:
    out = 1.0
    for i in range(d):
        out *= p - i
    return out


class DualSolution:
    """Evaluator for the dual value function and its derivatives.

    Parameters
    ----------
    params : ModelParams
    allow_rho_general : bool, default False
        The ``rho != r`` closed form needs extra parameter conditions to be
        a genuine solution; it is only built when this flag is set, and a
        convexity scan is run before the object is returned.
    convexity_probe : (float, float), default (0, 10)
        Reference-level range scanned by that check.  Some ``rho != r``
        parameter sets are convex only for h above a positive cut-off.

    Notes
    -----
    All array-valued methods broadcast ``y`` against ``h``.  Points below
    the singular boundary raise :class:`DomainError`; project ``h`` first.
    """

    def __init__(self, params: ModelParams, allow_rho_general: bool = False,
                 convexity_probe: tuple[float, float] = (0.0, 10.0)):
        self.params = params
        self.constants = derive_constants(params)
        if params.rho_case is RhoCase.GENERAL and not allow_rho_general:
            raise DomainError(
                "rho != r requires allow_rho_general=True (extra parameter "
                "conditions apply)")
        self._sums = _coefficient_sums(params, self.constants)
        self._forms = _region_forms(params, self.constants, self._sums)
        if params.rho_case is RhoCase.GENERAL:
            self._check_convexity(*convexity_probe)

    # ------------------------------------------------------------------ setup
    def _check_convexity(self, h_lo: float, h_hi: float) -> None:
        for h in np.linspace(h_lo, h_hi, 41):
            _, _, ls = self.log_thresholds(h)
            la = self.params.lam * self.params.beta * h
            ys = np.exp(np.linspace(ls, la + 3.0, 200))
            if not np.all(self.v_yy(ys, h) > 0):
                raise DomainError(
                    f"dual value is not convex at h={h:.4g} for these "
                    "parameters (rho != r)")

    # -------------------------------------------------------------- geometry
    def log_thresholds(self, h):
        """Return ``(ln a, ln b, ln s)``; ``ln s`` is -inf when lam is 0 or 1."""
        p = self.params
        h = np.asarray(h, dtype=float)
        la = p.lam * p.beta * h
        lb = (p.lam - 1.0) * p.beta * h
        if p.lambda_case is LambdaCase.INTERIOR:
            ls = math.log(1.0 - p.lam) + lb
        else:
            ls = np.full_like(lb, -np.inf)
        if p.lambda_case is LambdaCase.ZERO:
            la = np.zeros_like(la)
            lb = np.full_like(lb, -np.inf)
        return la, lb, ls

    def thresholds(self, h):
        """Return ``(a, b, s)`` in y units."""
        return tuple(np.exp(t) for t in self.log_thresholds(h))

    def _codes(self, y, h):
        y = np.asarray(y, dtype=float)
        h = np.asarray(h, dtype=float)
        if np.any(h < 0):
            raise DomainError("h must be nonnegative")
        if np.any(~(y > 0)):
            raise DomainError("y must be positive")
        y, h = np.broadcast_arrays(y, h)
        ly = np.log(y)
        la, lb, ls = self.log_thresholds(h)
        codes = np.full(y.shape, int(Regime.BELOW_DOMAIN), dtype=np.int8)
        codes = np.where(ly >= ls - TIE_TOL, int(Regime.SINGULAR_BOUNDARY), codes)
        codes = np.where(ly > ls + TIE_TOL, int(Regime.PEAK_TRACKING), codes)
        codes = np.where(ly > lb + TIE_TOL, int(Regime.INTERIOR), codes)
        codes = np.where(ly >= la - TIE_TOL, int(Regime.ZERO_CONSUMPTION), codes)
        return codes, y, h, ly

    def classify(self, y, h):
        """Regime of ``(y, h)``: a :class:`Regime` for scalars, int codes for arrays."""
        codes, *_ = self._codes(y, h)
        if codes.ndim == 0:
            return Regime(int(codes))
        return codes

    # ---------------------------------------------------------- coefficients
    def coefficient_sums(self) -> dict[str, ExpSum]:
        return dict(self._sums)

    def coefficients(self, h: float) -> DualCoefficients:
        """Evaluate C2..C6 at ``h`` (unused entries are nan)."""
        if h < 0:
            raise DomainError("h must be nonnegative")
        lc = self.params.lambda_case
        vals = {}
        for name, es in self._sums.items():
            unused = (lc is LambdaCase.ZERO and name in ("c4", "c5", "c6")) or \
                (lc is LambdaCase.ONE and name == "c6")
            vals[name] = math.nan if unused else float(es(h, self.params.beta))
        return DualCoefficients(**vals)

    # ------------------------------------------------------------ evaluation
    def branch(self, region: int, y, h, d: int = 0):
        """Evaluate the ``d``-th y-derivative of one region's formula.

        ``region`` is 0 (top, y >= a), 1 (middle) or 2 (bottom, y <= b).  No
        classification is performed, so the formula may be extended past its
        own region, which is what smooth-fit checks need.
        """
        y = np.asarray(y, dtype=float)
        h = np.asarray(h, dtype=float)
        y, h = np.broadcast_arrays(y, h)
        out = self._branch(self._forms[region], y, h, np.log(y), d)
        return out if out.ndim else float(out)

    def branch_z(self, region: int, z, h, d: int = 0, shift: int = 0):
        """``y**shift`` times the ``d``-th y-derivative of a region formula at ``y = exp(z)``.

        Works entirely from ``z``, so it stays accurate when ``y`` itself
        would underflow (large ``h`` on the singular boundary).
        """
        z = np.asarray(z, dtype=float)
        h = np.asarray(h, dtype=float)
        z, h = np.broadcast_arrays(z, h)
        out = self._branch(self._forms[region], None, h, z, d, shift)
        return out if out.ndim else float(out)

    def _branch(self, form: RegionForm, yy, hh, ll, d: int, shift: int = 0):
        beta = self.params.beta

        def ypow(k):
            # y**k, exact for the common k = 0, 1 when y is given
            if k == 0:
                return 1.0
            if k == 1 and yy is not None:
                return yy
            return np.exp(k * ll)

        val = np.zeros(np.shape(ll), dtype=float)
        for pw, es in form.powers:
            fac = _falling(pw, d)
            for amp, rate in zip(es.amps, es.rates):
                val = val + amp * fac * np.exp(rate * beta * hh + (pw - d + shift) * ll)
        if form.alpha:
            if d == 0:
                val = val + form.alpha * ypow(1 + shift) * ll
            elif d == 1:
                val = val + form.alpha * (ll + 1.0) * ypow(shift)
            else:
                val = val + form.alpha * (1.0 / yy if shift == 0 and yy is not None
                                          else ypow(shift - 1))
        if d == 0:
            val = val + (form.b0 + form.b1 * hh) * ypow(1 + shift)
            if form.k0:
                val = val + form.k0 * np.exp(form.kr * beta * hh) * ypow(shift)
        elif d == 1:
            val = val + (form.b0 + form.b1 * hh) * ypow(shift)
        return val

    def scaled_coefficient(self, name: str, h, log_factor):
        """``C(h) * exp(log_factor)`` evaluated without forming C(h) alone."""
        es = self._sums[name]
        beta = self.params.beta
        h = np.asarray(h, dtype=float)
        out = np.zeros(np.broadcast(h, np.asarray(log_factor)).shape)
        for amp, rate in zip(es.amps, es.rates):
            out = out + amp * np.exp(rate * beta * h + log_factor)
        return out if out.ndim else float(out)

    def _eval(self, y, h, d: int, allow_below: bool = False):
        codes, y, h, ly = self._codes(y, h)
        if not allow_below and np.any(codes == Regime.BELOW_DOMAIN):
            raise DomainError("point lies below the singular boundary; "
                              "project h first")
        out = np.zeros(y.shape, dtype=float)
        region = np.where(codes >= Regime.PEAK_TRACKING, 2, codes)
        for idx, form in enumerate(self._forms):
            m = region == idx
            if np.any(m):
                out[m] = self._branch(form, y[m], h[m], ly[m], d)
        return out if out.ndim else float(out)

    def v(self, y, h):
        """Dual value v(y, h)."""
        return self._eval(y, h, 0)

    def v_y(self, y, h):
        """First y-derivative of v."""
        return self._eval(y, h, 1)

    def v_yy(self, y, h):
        """Second y-derivative of v."""
        return self._eval(y, h, 2)

    def v_h(self, y, h, delta: float | None = None):
        """Finite-difference h-derivative of v.

        Central difference with step ``1e-5*max(1, h)`` when both neighbours
        lie in the domain, otherwise a second-order one-sided formula.
        """
        y = np.asarray(y, dtype=float)
        h = np.asarray(h, dtype=float)
        y, h = np.broadcast_arrays(y, h)
        dh = 1e-5 * np.maximum(1.0, h) if delta is None else np.full(h.shape, delta)
        ok_lo = h - dh >= 0
        if np.any(ok_lo):
            codes = self._codes(y, np.where(ok_lo, h - dh, h))[0]
            ok_lo &= codes != Regime.BELOW_DOMAIN
        if np.any(self._codes(y, h)[0] == Regime.BELOW_DOMAIN):
            raise DomainError("stencil centre lies below the singular boundary")
        hp = self._eval(y, h + dh, 0)
        central = (hp - self._eval(y, np.where(ok_lo, h - dh, h), 0)) / (2 * dh)
        if np.all(ok_lo):
            return central
        fwd = (-3.0 * self._eval(y, h, 0) + 4.0 * hp
               - self._eval(y, h + 2 * dh, 0)) / (2 * dh)
        out = np.where(ok_lo, central, fwd)
        return out if out.ndim else float(out)

    # ---------------------------------------------------------------- the ODE
    def source(self, y, h):
        """``-sup_{0<=c<=h}[U(c - lam h) - c y]``, the right-hand side of the ODE."""
        p = self.params
        codes, y, h, ly = self._codes(y, h)
        beta, lam = p.beta, p.lam
        zero = np.exp(lam * beta * h) / beta
        inner = y / beta + lam * h * y - y * ly / beta
        peak = np.exp((lam - 1.0) * beta * h) / beta + h * y
        out = np.where(codes == Regime.ZERO_CONSUMPTION, zero,
                       np.where(codes == Regime.INTERIOR, inner, peak))
        return out if out.ndim else float(out)

    def dual_ode_residual(self, y, h):
        """``(kappa^2/2) y^2 v_yy + (rho - r) y v_y - rho v - source``."""
        p = self.params
        y = np.asarray(y, dtype=float)
        k2 = 0.5 * self.constants.kappa ** 2
        res = k2 * y * y * self.v_yy(y, h) - p.rho * self.v(y, h) - self.source(y, h)
        if p.rho_case is RhoCase.GENERAL:
            res = res + (p.rho - p.r) * y * self.v_y(y, h)
        return res
