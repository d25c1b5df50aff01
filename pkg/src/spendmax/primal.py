"""Primal quantities recovered from the dual solution.

Wealth ``x`` and the dual variable are linked by ``x = g(y, h) = -v_y(y, h)``.
Inverting ``g`` gives the marginal utility ``f(x, h) = u_x(x, h)``, from which
the value ``u`` and the feedback controls ``c*`` and ``pi*`` follow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .dual import DualSolution, Regime
from .errors import BracketError, DomainError
from .model import LambdaCase, ModelParams, RhoCase

ROOT_RTOL = 1e-12
ROOT_MAXITER = 200
SPLG_RTOL = 1e-12


@dataclass(frozen=True)
class Boundaries:
    """Wealth thresholds at one reference level.

    ``x_zero``: consumption switches on; ``x_modr``: consumption reaches
    ``lam*h``; ``x_aggv``: consumption reaches ``h``; ``x_splg``: consumption
    starts pushing the peak upward (upper edge of the effective domain).
    """

    x_zero: float
    x_modr: float
    x_aggv: float
    x_splg: float

    def as_tuple(self):
        return (self.x_zero, self.x_modr, self.x_aggv, self.x_splg)


@dataclass(frozen=True)
class PolicyPoint:
    """Optimal controls and value at one wealth/reference state."""

    c: float
    pi: float
    u: float
    f: float
    regime: Regime
    h: float           # reference level after any projection
    jumped: bool = False


def _solve_decreasing(fun, x, z_lo, z_hi, z0=None):
    """Vectorised safeguarded Newton for ``G(z) = x`` with ``G`` decreasing.

    ``fun(z, mask)`` must return ``(G, dG/dz)`` for the masked entries.  The
    bracket ``[z_lo, z_hi]`` must contain the root.
    """
    lo = np.array(z_lo, dtype=float, copy=True)
    hi = np.array(z_hi, dtype=float, copy=True)
    z = 0.5 * (lo + hi) if z0 is None else np.clip(z0, lo, hi)
    active = np.ones(z.shape, dtype=bool)
    for _ in range(ROOT_MAXITER):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        zi = z[idx]
        g, dg = fun(zi, idx)
        err = g - x[idx]
        lo[idx] = np.where(err > 0, zi, lo[idx])
        hi[idx] = np.where(err < 0, zi, hi[idx])
        with np.errstate(divide="ignore", invalid="ignore"):
            znew = zi - err / dg
        bad = ~np.isfinite(znew) | (znew <= lo[idx]) | (znew >= hi[idx])
        znew = np.where(bad, 0.5 * (lo[idx] + hi[idx]), znew)
        step = np.abs(znew - zi)
        z[idx] = np.where(err == 0, zi, znew)
        done = (err == 0) | (step <= ROOT_RTOL * np.maximum(1.0, np.abs(zi))) \
            | (hi[idx] - lo[idx] <= ROOT_RTOL * np.maximum(1.0, np.abs(zi)))
        active[idx[done]] = False
    return z


class PrimalSolution:
    """Boundary curves, marginal utility, value and feedback policy.

    Parameters
    ----------
    dual : DualSolution or ModelParams
        A parameter record is wrapped in a :class:`DualSolution` first.
    """

    def __init__(self, dual: DualSolution | ModelParams):
        if isinstance(dual, ModelParams):
            dual = DualSolution(dual)
        self.dual = dual
        self.params = dual.params
        self.constants = dual.constants

    # ------------------------------------------------------------ boundaries
    def boundaries(self, h) -> Boundaries:
        """Closed-form thresholds at ``h`` (scalars or arrays)."""
        p, k, d = self.params, self.constants, self.dual
        h_arr = np.asarray(h, dtype=float)
        if np.any(h_arr < 0):
            raise DomainError("h must be nonnegative")
        r, beta, lam = p.r, p.beta, p.lam
        r1, r2 = k.r1, k.r2
        lc = p.lambda_case

        if p.rho_case is RhoCase.GENERAL:
            # no closed form for the thresholds here: evaluate g at the threshold y-values
            la, lb, ls = d.log_thresholds(h_arr)
            xz = -d.branch(0, np.exp(la), h_arr, 1)
            xm = -d.branch(1, np.ones_like(h_arr), h_arr, 1)
            xa = -d.branch(1, np.exp(lb), h_arr, 1)
            xs = -d.branch(2, np.exp(ls), h_arr, 1)
            return Boundaries(*(np.asarray(v)[()] for v in (xz, xm, xa, xs)))

        const = k.kappa ** 2 / (2 * r * r * beta)
        bh = beta * h_arr
        x_zero = -r2 * d.scaled_coefficient("c2", h_arr, lam * bh * (r2 - 1))
        if lc is LambdaCase.ZERO:
            x_zero = np.asarray(x_zero)
            inf = np.full(x_zero.shape, np.inf)
            return Boundaries(x_zero[()], x_zero[()], inf[()], inf[()])
        x_modr = -r1 * d.scaled_coefficient("c3", h_arr, 0.0) \
            - r2 * d.scaled_coefficient("c4", h_arr, 0.0) + lam * h_arr / r - const
        x_aggv = -r1 * d.scaled_coefficient("c3", h_arr, (lam - 1) * (r1 - 1) * bh) \
            - r2 * d.scaled_coefficient("c4", h_arr, (lam - 1) * (r2 - 1) * bh) \
            + h_arr / r - const
        if lc is LambdaCase.ONE:
            x_splg = h_arr / r
        else:
            l1 = math.log(1 - lam)
            x_splg = -r1 * d.scaled_coefficient(
                "c5", h_arr, (r1 - 1) * l1 + (lam - 1) * (r1 - 1) * bh) \
                - r2 * d.scaled_coefficient(
                    "c6", h_arr, (r2 - 1) * l1 + (lam - 1) * (r2 - 1) * bh) \
                + h_arr / r
        return Boundaries(*(np.asarray(v, dtype=float)[()]
                            for v in (x_zero, x_modr, x_aggv, x_splg)))

    def x_splg(self, h):
        return self.boundaries(h).x_splg

    # ----------------------------------------------------------- dual map g
    def g(self, y, h):
        """Wealth associated with dual state ``y``: ``-v_y(y, h)``."""
        return -self.dual.v_y(y, h)

    # ------------------------------------------------------------- inverse
    def _invert_region(self, region: int, x, h, z_lo, z_hi):
        d = self.dual

        def fun(z, idx):
            hh = h[idx]
            return -d.branch_z(region, z, hh, 1), -d.branch_z(region, z, hh, 2, shift=1)

        return _solve_decreasing(fun, x, z_lo, z_hi)

    def _lower_bracket(self, region: int, x, h, z_hi):
        """Walk ln(y) down from ``z_hi`` until g exceeds x (lam = 0 only)."""
        z = np.array(z_hi, dtype=float) - 1.0
        step = 1.0
        for _ in range(60):
            g = -self.dual.branch(region, np.exp(z), h, 1)
            short = g < x
            if not np.any(short):
                return z
            step *= 2.0
            z = np.where(short, z - step, z)
        raise BracketError("could not bracket f from below")

    def f(self, x, h):
        """Marginal utility ``u_x(x, h)`` on the effective domain.

        Raises
        ------
        DomainError
            If ``x < 0`` or ``x`` exceeds the singular boundary ``x_splg(h)``.
        """
        scalar = np.ndim(x) == 0 and np.ndim(h) == 0
        x, h = np.broadcast_arrays(np.asarray(x, dtype=float),
                                   np.asarray(h, dtype=float))
        shape = x.shape
        lf, _ = self._lf_codes(x.ravel().copy(), h.ravel().copy())
        out = np.exp(lf)
        return float(out[0]) if scalar else out.reshape(shape)

    def _lf_codes(self, x, h):
        """``ln f`` and regime codes; ``f`` itself underflows for large h."""
        p, d = self.params, self.dual
        if np.any(~(x >= 0)):
            raise DomainError("wealth must be nonnegative")
        if np.any(h < 0):
            raise DomainError("h must be nonnegative")
        b = self.boundaries(h)
        xz, xa, xs = (np.broadcast_to(v, x.shape) for v in (b.x_zero, b.x_aggv, b.x_splg))
        lc = p.lambda_case
        if lc is not LambdaCase.ONE and np.any(x > xs * (1 + SPLG_RTOL)):
            raise DomainError("wealth above the singular boundary; project h first")
        la, lb, ls = (np.broadcast_to(v, x.shape) for v in d.log_thresholds(h))
        out = np.empty_like(x)
        codes = np.empty(x.shape, dtype=np.int8)
        r2 = self.constants.r2

        m = x <= xz
        codes[m] = Regime.ZERO_CONSUMPTION
        if np.any(m):
            # C2 vanishes at lam = 1, h = 0, where the subsistence branch
            # below takes over
            with np.errstate(divide="ignore", invalid="ignore"):
                lc2 = np.log(-r2 * np.asarray(d.scaled_coefficient("c2", h[m], 0.0)))
                out[m] = (np.log(x[m]) - lc2) / (r2 - 1)

        m = (x > xz) & (x < xa)
        codes[m] = Regime.INTERIOR
        if np.any(m):
            hi = la[m]
            lo = lb[m] if lc is not LambdaCase.ZERO else \
                self._lower_bracket(1, x[m], h[m], hi)
            out[m] = self._invert_region(1, x[m], h[m], lo, hi)

        if lc is LambdaCase.ONE:
            m = (x >= xa) & (x < xs)
            codes[m] = Regime.PEAK_TRACKING
            if np.any(m):
                c5 = np.asarray(d.scaled_coefficient("c5", h[m], 0.0))
                out[m] = np.log((h[m] / p.r - x[m]) / (c5 * self.constants.r1)) \
                    / (self.constants.r1 - 1)
            m = x >= xs
            codes[m] = Regime.SUBSISTENCE
            out[m] = -np.inf
        elif lc is LambdaCase.INTERIOR:
            m = x >= xa
            sing = m & (x >= xs * (1 - SPLG_RTOL))
            codes[m] = Regime.PEAK_TRACKING
            codes[sing] = Regime.SINGULAR_BOUNDARY
            if np.any(m):
                out[m] = self._invert_region(2, x[m], h[m], ls[m], lb[m])
        return out, codes

    # ------------------------------------------------------ reference jump
    def h_tilde(self, x):
        """Reference level whose singular boundary passes through ``x``."""
        if np.ndim(x):
            return np.array([self.h_tilde(float(v)) for v in np.ravel(x)]
                            ).reshape(np.shape(x))
        p = self.params
        if p.lambda_case is LambdaCase.ZERO:
            raise DomainError("no singular boundary when lambda = 0")
        if p.lambda_case is LambdaCase.ONE:
            if x < 0:
                raise DomainError("wealth must be nonnegative")
            return p.r * x
        x0 = float(self.x_splg(0.0))
        if x < x0:
            raise DomainError(f"x={x} lies below x_splg(0)={x0}")
        if x == x0:
            return 0.0
        hi = 1.0
        for _ in range(60):
            if self.x_splg(hi) >= x:
                break
            hi *= 2.0
        else:
            raise BracketError("h_tilde bracket expansion failed")
        return brentq(lambda hh: float(self.x_splg(hh)) - x, 0.0, hi,
                      xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=ROOT_MAXITER)

    def project_to_domain(self, x: float, h: float):
        """Return ``(x, h', jumped)``; ``h'`` lifts ``(x, h)`` onto the domain."""
        if x < 0 or h < 0:
            raise DomainError("x and h must be nonnegative")
        if self.params.lambda_case is not LambdaCase.INTERIOR:
            return x, h, False
        if x <= self.x_splg(h) * (1 + SPLG_RTOL):
            return x, h, False
        return x, float(self.h_tilde(x)), True

    def _project_arrays(self, x, h):
        h = h.copy()
        jumped = np.zeros(x.shape, dtype=bool)
        if self.params.lambda_case is LambdaCase.INTERIOR:
            over = x > self.x_splg(h) * (1 + SPLG_RTOL)
            for i in np.nonzero(over)[0]:
                h[i] = self.h_tilde(float(x[i]))
            jumped = over
        return h, jumped

    # --------------------------------------------------------- value, policy
    def _u_from(self, x, h, lf, codes):
        p, k, d = self.params, self.constants, self.dual
        r, beta, lam = p.r, p.beta, p.lam
        f = np.exp(lf)
        if p.rho_case is RhoCase.GENERAL:
            safe = np.where(x > 0, f, 1.0)
            u = d.v(safe, h) + x * safe
            return np.where(x > 0, u, -np.exp(lam * beta * h) / (p.rho * beta))
        u = np.empty_like(x)
        m = codes == Regime.ZERO_CONSUMPTION
        if np.any(m):
            top = -np.exp(lam * beta * h[m]) / (r * beta)
            pos = x[m] > 0
            # x * f1 ~ x**(r2/(r2-1)) and C2 f1**r2 both vanish as x -> 0
            inner = np.where(pos, d.scaled_coefficient("c2", h[m], k.r2 * np.where(pos, lf[m], 0.0))
                             + x[m] * np.where(pos, f[m], 0.0), 0.0)
            u[m] = inner + top
        m = codes == Regime.INTERIOR
        if np.any(m):
            fm, lm, hm = f[m], lf[m], h[m]
            u[m] = d.scaled_coefficient("c3", hm, k.r1 * lm) \
                + d.scaled_coefficient("c4", hm, k.r2 * lm) \
                + fm / (r * beta) * (lm - lam * beta * hm + k.kappa ** 2 / (2 * r)
                                     - 1 + x[m] * r * beta)
        m = (codes == Regime.PEAK_TRACKING) | (codes == Regime.SINGULAR_BOUNDARY)
        if np.any(m):
            fm, lm, hm = f[m], lf[m], h[m]
            u[m] = d.scaled_coefficient("c5", hm, k.r1 * lm) \
                + d.scaled_coefficient("c6", hm, k.r2 * lm) - hm * fm / r \
                - np.exp((lam - 1) * beta * hm) / (r * beta) + x[m] * fm
        m = codes == Regime.SUBSISTENCE
        u[m] = -1.0 / (r * beta)
        return u

    def evaluate(self, x, h):
        """Vectorised value and policy.

        Returns
        -------
        dict
            Arrays ``c, pi, u, f, regime, h, jumped`` (``h`` after projection).
        """
        p, d = self.params, self.dual
        x, h = np.broadcast_arrays(np.asarray(x, dtype=float),
                                   np.asarray(h, dtype=float))
        shape = x.shape
        x, h = x.ravel().copy(), h.ravel().copy()
        if np.any(~(x >= 0)) or np.any(h < 0):
            raise DomainError("x and h must be nonnegative")
        h, jumped = self._project_arrays(x, h)
        lf, codes = self._lf_codes(x, h)
        f = np.exp(lf)
        u = self._u_from(x, h, lf, codes)
        beta, lam = p.beta, p.lam
        kpi = (p.mu - p.r) / p.sigma ** 2

        c = np.zeros_like(x)
        pi = np.zeros_like(x)
        m = codes == Regime.ZERO_CONSUMPTION
        pi[m] = kpi * (1 - self.constants.r2) * x[m]
        m = codes == Regime.INTERIOR
        c[m] = -lf[m] / beta + lam * h[m]
        pi[m] = kpi * d.branch_z(1, lf[m], h[m], 2, shift=1)
        m = codes == Regime.PEAK_TRACKING
        c[m] = h[m]
        m2 = m | (codes == Regime.SINGULAR_BOUNDARY)
        pi[m2] = kpi * d.branch_z(2, lf[m2], h[m2], 2, shift=1)
        m = codes == Regime.SINGULAR_BOUNDARY
        if np.any(m):
            c[m] = (lf[m] - math.log(1 - lam)) / ((lam - 1) * beta)
        m = codes == Regime.SUBSISTENCE
        c[m] = h[m]
        return {k: v.reshape(shape) for k, v in
                dict(c=c, pi=pi, u=u, f=f, regime=codes, h=h, jumped=jumped).items()}

    def value_u(self, x, h):
        """Primal value ``u(x, h)``; points above ``x_splg(h)`` are projected."""
        out = self.evaluate(x, h)["u"]
        return float(out) if out.ndim == 0 else out

    def policy(self, x: float, h: float) -> PolicyPoint:
        """Feedback controls at a single state (projected if necessary)."""
        e = self.evaluate(float(x), float(h))
        return PolicyPoint(c=float(e["c"]), pi=float(e["pi"]), u=float(e["u"]),
                           f=float(e["f"]), regime=Regime(int(e["regime"])),
                           h=float(e["h"]), jumped=bool(e["jumped"]))

    def asymptotic_limits(self) -> tuple[float, float]:
        """Large-wealth limits of ``c*/x`` and ``pi*`` along the singular boundary."""
        p, k = self.params, self.constants
        if p.lambda_case is not LambdaCase.INTERIOR:
            raise DomainError("asymptotic limits need 0 < lambda < 1")
        if p.rho_case is not RhoCase.EQUAL:
            raise DomainError("asymptotic limits are only available for rho = r")
        pi_lim = (p.mu - p.r) * (1 - p.lam) ** (k.r1 - 1) / (p.r * p.beta * p.sigma ** 2)
        return p.r, pi_lim


def solve(params: ModelParams | dict, **kw) -> PrimalSolution:
    """Convenience constructor from a parameter record."""
    from .model import validate_params
    if not isinstance(params, ModelParams):
        params = validate_params(params)
    return PrimalSolution(DualSolution(params, **kw))
