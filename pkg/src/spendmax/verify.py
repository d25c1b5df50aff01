"""Independent checks of the closed forms.

Nothing here reuses the coefficient algebra of :mod:`spendmax.dual` except
as the object under test: the BVP oracle solves the dual ODE by finite
differences with boundary conditions that only use the shape of the
solution at the grid ends, the HJB residual works on the primal side, and
the running-maximum formula is checked against exact joint sampling.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtr

from .dual import DualSolution, Regime
from .errors import DomainError, GridError, SpendmaxError, StencilError
from .model import LambdaCase, ModelParams, RhoCase
from .primal import PrimalSolution

SCAN_SCHEMA = "spendmax.scan/1"
MIN_GRID = 200


def _as_primal(model) -> PrimalSolution:
    if isinstance(model, PrimalSolution):
        return model
    return PrimalSolution(model)


# ----------------------------------------------------------------- BVP oracle
@dataclass(frozen=True)
class BVPReport:
    """Finite-difference solve of the dual ODE compared with the closed form.

    ``order`` is ``log2`` of the ratio between the deviation on a grid with
    half the points and the deviation on the requested grid.
    """

    h: float
    n: int
    z_left: float
    z_right: float
    max_rel_dev: float
    coarse_rel_dev: float
    order: float
    left_condition: str

    def as_dict(self) -> dict:
        return asdict(self)


def _particular(form, y, h, beta):
    """Explicit part of a region formula and its z-derivative y*P_y."""
    ly = np.log(y)
    p = form.alpha * y * ly + (form.b0 + form.b1 * h) * y
    if form.k0:
        p = p + form.k0 * math.exp(form.kr * beta * h)
    pz = y * (form.alpha * (ly + 1.0) + form.b0 + form.b1 * h)
    return p, pz


def _fd_solve(dual: DualSolution, h: float, z: np.ndarray, left, right):
    """Central differences for A v_zz + B v_z - rho v = S on a uniform z grid.

    ``left``/``right`` are ``(p, q)`` meaning ``v_z = p v + q`` at that end,
    imposed with a ghost node.
    """
    p = dual.params
    A = 0.5 * dual.constants.kappa ** 2
    B = (p.rho - p.r) - A
    n = z.shape[0]
    dz = z[1] - z[0]
    lo = A / dz ** 2 - B / (2 * dz)
    di = -2 * A / dz ** 2 - p.rho
    up = A / dz ** 2 + B / (2 * dz)
    rhs = np.asarray(dual.source(np.exp(z), h), dtype=float).copy()
    ab = np.zeros((3, n))
    ab[0, 1:] = up
    ab[1, :] = di
    ab[2, :-1] = lo
    # v_{-1} = v_1 - 2 dz (p v_0 + q)
    pl, ql = left
    ab[0, 1] += lo
    ab[1, 0] += -2 * dz * pl * lo
    rhs[0] += 2 * dz * ql * lo
    # v_n = v_{n-2} + 2 dz (p v_{n-1} + q)
    pr, qr = right
    ab[2, n - 2] += up
    ab[1, n - 1] += 2 * dz * pr * up
    rhs[n - 1] -= 2 * dz * qr * up
    return solve_banded((1, 1), ab, rhs)


def bvp_oracle(model, h: float, n: int = 2000, y_max_factor: float = 20.0,
               low_span: float = 6.0) -> BVPReport:
    """Solve the dual ODE at fixed ``h`` by finite differences.

    The grid is uniform in ``z = ln y`` from the singular boundary
    ``ln s(h)`` to ``ln(y_max_factor * a(h))``.  Left end: ``v_y = -x_splg(h)``.
    Right end: ``v - P_top`` is a multiple of ``y**r2``, i.e.
    ``v_z - r2 v = -r2 P_top``.  Without a singular boundary (lambda 0 or 1)
    the left end sits ``low_span`` below the lowest threshold and uses the
    analogous condition for the ``y**r1`` branch.

    Parameters
    ----------
    model : PrimalSolution, DualSolution or ModelParams
    h : float
    n : int
        Grid points, at least 200.
    """
    if n < MIN_GRID:
        raise GridError(f"grid needs at least {MIN_GRID} points")
    if y_max_factor < 10:
        raise GridError("right end must reach at least 10 * exp(lam*beta*h)")
    if h < 0:
        raise DomainError("h must be nonnegative")
    primal = _as_primal(model)
    dual = primal.dual
    p, k = dual.params, dual.constants
    top, mid, low = dual._forms
    la, lb, ls = (float(t) for t in dual.log_thresholds(h))
    z_right = la + math.log(y_max_factor)

    yr = math.exp(z_right)
    p_top, pz_top = _particular(top, yr, h, p.beta)
    right = (k.r2, float(pz_top - k.r2 * p_top))

    if p.lambda_case is LambdaCase.INTERIOR:
        z_left = ls
        left = (0.0, float(-math.exp(ls) * primal.x_splg(h)))
        kind = "neumann"
    else:
        form = mid if p.lambda_case is LambdaCase.ZERO else low
        z_left = (la if p.lambda_case is LambdaCase.ZERO else lb) - low_span
        pl, pzl = _particular(form, math.exp(z_left), h, p.beta)
        left = (k.r1, float(pzl - k.r1 * pl))
        kind = "robin"

    def dev(m):
        z = np.linspace(z_left, z_right, m)
        v_fd = _fd_solve(dual, h, z, left, right)
        v_cf = dual.v(np.exp(z), h)
        return float(np.max(np.abs(v_fd - v_cf) / np.abs(v_cf)))

    fine = dev(n)
    coarse = dev((n + 1) // 2)
    order = math.log2(coarse / fine) if fine > 0 else math.inf
    return BVPReport(h=float(h), n=n, z_left=z_left, z_right=z_right,
                     max_rel_dev=fine, coarse_rel_dev=coarse, order=order,
                     left_condition=kind)


# --------------------------------------------------------------- HJB residual
@dataclass(frozen=True)
class HJBResidual:
    residual: float
    c_star: float
    u: float
    ux: float
    uxx: float
    regime: int


def hjb_residual_from(params: ModelParams, x: float, h: float, u: float,
                      ux: float, uxx: float) -> tuple[float, float]:
    """Residual of the primal HJB at one point and the maximising consumption.

    ``sup_{0<=c<=h}[U(c - lam h) - c u_x] - rho u + r x u_x
    - (kappa^2/2) u_x^2/u_xx``; the last term is dropped when ``u_x = 0``.
    With ``lam = 0`` the reference does not enter the utility and the
    supremum runs over all ``c >= 0``.
    """
    p = params
    beta, lam = p.beta, p.lam
    c_hi = math.inf if p.lambda_case is LambdaCase.ZERO else h
    if ux > 0:
        c = min(max(lam * h - math.log(ux) / beta, 0.0), c_hi)
    else:
        c = h
    sup = -math.exp(beta * (lam * h - c)) / beta - c * ux
    kappa2 = ((p.mu - p.r) / p.sigma) ** 2
    if ux == 0:
        port = 0.0
    elif uxx == 0:
        port = -math.inf
    else:
        port = -0.5 * kappa2 * ux * ux / uxx
    return sup - p.rho * u + p.r * x * ux + port, c


def hjb_residual_primal(model, x: float, h: float, u_scale: float = 1.0,
                        delta: float | None = None) -> HJBResidual:
    """Primal HJB residual with ``u_x = f`` and a central difference for ``u_xx``.

    ``u_scale`` multiplies ``u`` alone, which lets tests confirm the
    residual reacts to a wrong value function.  The stencil must stay in
    one regime; the step is shrunk twice by a factor 10 before
    :class:`StencilError` is raised.
    """
    primal = _as_primal(model)
    p = primal.params
    e = primal.evaluate(x, h)
    if bool(e["jumped"]):
        raise DomainError("(x, h) lies outside the domain; project first")
    reg = int(e["regime"])
    step = 1e-6 * max(1.0, x) if delta is None else delta
    if reg == Regime.SUBSISTENCE:
        res, c = hjb_residual_from(p, x, h, float(e["u"]) * u_scale, 0.0, 1.0)
        return HJBResidual(res, c, float(e["u"]), 0.0, 0.0, reg)
    for _ in range(3):
        xs = np.array([x - step, x + step])
        if xs[0] > 0 and xs[1] < primal.x_splg(h):
            side = primal.evaluate(xs, h)
            if np.all(side["regime"] == reg) and not np.any(side["jumped"]):
                uxx = float(side["f"][1] - side["f"][0]) / (2 * step)
                ux = float(e["f"])
                res, c = hjb_residual_from(p, x, h, float(e["u"]) * u_scale, ux, uxx)
                return HJBResidual(res, c, float(e["u"]), ux, uxx, reg)
        step /= 10
    raise StencilError(f"stencil at x={x:g} straddles a regime boundary")


# ---------------------------------------------------------------- scan report
@dataclass(frozen=True)
class ScanGrid:
    """Grid for :func:`scan_report`.

    ``n_y`` log-spaced dual points per ``h`` cover the domain from the
    singular boundary (or ``y_pad`` below the lowest threshold) up to
    ``y_pad`` above ``ln a``; ``n_x`` wealth points per ``h`` are used for
    the inversion checks.
    """

    h_values: tuple[float, ...] = tuple(np.linspace(0.0, 5.0, 20))
    n_y: int = 100
    n_x: int = 25
    y_pad: float = 3.0
    asymptotic_wealth: float = 1e4


@dataclass
class _Worst:
    name: str
    tolerance: float
    # larger value is worse unless lower_bound
    lower_bound: bool = False
    value: float = field(default=math.nan)
    point: dict = field(default_factory=dict)

    def offer(self, value: float, **point) -> None:
        value = float(value)
        if self.point and math.isnan(self.value):
            return  # a nan is already the worst possible outcome
        if not self.point or math.isnan(value) or \
                (value < self.value if self.lower_bound else value > self.value):
            self.value = value
            self.point = {k: float(v) for k, v in point.items()}

    def record(self) -> dict:
        if self.lower_bound:
            ok = self.value > self.tolerance
        else:
            ok = self.value < self.tolerance
        ok = ok and bool(self.point)
        return {"name": self.name, "grid_point": self.point, "value": self.value,
                "tolerance": self.tolerance, "pass": bool(ok)}


def _dual_grid(dual: DualSolution, h: float, n: int, pad: float) -> np.ndarray:
    la, lb, ls = (float(t) for t in dual.log_thresholds(h))
    lam_case = dual.params.lambda_case
    if lam_case is LambdaCase.INTERIOR:
        lo = ls
    elif lam_case is LambdaCase.ZERO:
        lo = la - pad
    else:
        lo = lb - pad
    return np.exp(np.linspace(lo, la + pad, n))


def scan_report(model, grid: ScanGrid | None = None) -> dict:
    """Run the closed-form invariants over a grid and collect the worst cases.

    Returns
    -------
    dict
        ``{"schema", "params", "passed", "checks"}`` where every check is
        ``{name, grid_point, value, tolerance, pass}`` for its worst point.
    """
    grid = grid or ScanGrid()
    primal = _as_primal(model)
    dual = primal.dual
    p, k = primal.params, primal.constants
    lc = p.lambda_case
    interior = lc is LambdaCase.INTERIOR

    ode = _Worst("dual_ode_residual", 1e-9)
    fit_v = _Worst("smooth_fit_value", 1e-10)
    fit_dv = _Worst("smooth_fit_slope", 1e-10)
    convex = _Worst("convexity_min_v_yy", 0.0, lower_bound=True)
    free = _Worst("free_boundary_v_h", 1e-5)
    trip = _Worst("inversion_round_trip", 1e-10)
    ident = _Worst("boundary_identities", 1e-10)
    order = _Worst("boundary_order_min_gap", 0.0, lower_bound=True)
    hjb = _Worst("hjb_residual", 1e-5)
    checks = [ode, fit_v, fit_dv, convex]
    if interior:
        checks.append(free)
    checks += [trip, ident]
    if lc is not LambdaCase.ZERO:
        checks.append(order)
    checks.append(hjb)

    for h in grid.h_values:
        h = float(h)
        ys = _dual_grid(dual, h, grid.n_y, grid.y_pad)
        v = dual.v(ys, h)
        res = np.abs(dual.dual_ode_residual(ys, h)) / (1 + np.abs(v))
        i = int(np.argmax(res))
        ode.offer(res[i], h=h, y=ys[i])
        # lam = 1, h = 0 makes the bottom branch linear in y (v_yy = 0): all
        # wealth is then in the subsistence region, so it is not scanned
        if not (lc is LambdaCase.ONE and h == 0):
            vyy = dual.v_yy(ys, h)
            i = int(np.argmin(vyy))
            convex.offer(vyy[i], h=h, y=ys[i])

        a, b, s = (float(t) for t in dual.thresholds(h))
        pairs = [(a, 0, 1)]
        if lc is not LambdaCase.ZERO:
            pairs.append((b, 1, 2))
        for yy, i0, i1 in pairs:
            v0, v1 = dual.branch(i0, yy, h), dual.branch(i1, yy, h)
            fit_v.offer(abs(v0 - v1) / (1 + abs(v0)), h=h, y=yy)
            d0, d1 = dual.branch(i0, yy, h, 1), dual.branch(i1, yy, h, 1)
            fit_dv.offer(abs(d0 - d1) / (1 + abs(d0)), h=h, y=yy)
        if interior:
            free.offer(abs(dual.v_h(s, h)), h=h, y=s)

        bd = primal.boundaries(h)
        xs_top = bd.x_splg if math.isfinite(bd.x_splg) else 4 * bd.x_zero + 10
        # a broken closed form can put thresholds in the wrong place; the
        # primal checks then record nan (a failure) instead of raising
        if xs_top > 0:
            xg = np.linspace(0, xs_top, grid.n_x + 2)[1:-1]
            try:
                err = np.abs(primal.g(primal.f(xg, h), h) - xg) / (1 + xg)
                i = int(np.argmax(err))
                trip.offer(err[i], h=h, x=xg[i])
            except SpendmaxError:
                trip.offer(math.nan, h=h)

        ident_pts = [(a, bd.x_zero)]
        if lc is not LambdaCase.ZERO:
            ident_pts += [(1.0, bd.x_modr), (b, bd.x_aggv)]
        if interior:
            ident_pts.append((s, bd.x_splg))
        for yy, xb in ident_pts:
            try:
                ident.offer(abs(primal.g(yy, h) - xb) / max(1.0, abs(xb)), h=h, y=yy)
            except SpendmaxError:
                ident.offer(math.nan, h=h, y=yy)

        # thresholds that merge for lambda in {0, 1} are compared once;
        # at h = 0 the lower three coincide, so only h > 0 is ordered
        if h > 0 and lc is not LambdaCase.ZERO:
            if interior:
                seq = [bd.x_zero, bd.x_modr, bd.x_aggv, bd.x_splg]
            else:
                seq = [bd.x_zero, bd.x_aggv, bd.x_splg]
            order.offer(min(q - pq for pq, q in zip(seq, seq[1:])), h=h)

        # HJB at the midpoint of every nondegenerate region
        edges = [0.0, bd.x_zero]
        if lc is not LambdaCase.ZERO:
            edges += [bd.x_aggv, bd.x_splg]
        else:
            edges += [2 * bd.x_zero + 5]
        for lo_x, hi_x in zip(edges, edges[1:]):
            if hi_x - lo_x > 1e-6 * max(1.0, hi_x):
                xm = 0.5 * (lo_x + hi_x)
                try:
                    r = hjb_residual_primal(primal, xm, h)
                except StencilError:
                    continue
                except SpendmaxError:
                    hjb.offer(math.nan, h=h, x=xm)
                    continue
                hjb.offer(abs(r.residual) / (1 + abs(r.u)), h=h, x=xm)

    records = [c.record() for c in checks]

    if interior and p.rho_case is RhoCase.EQUAL:
        records += _asymptotic_records(primal, grid.asymptotic_wealth)
    if lc is LambdaCase.ONE:
        records += _subsistence_records(primal, grid.h_values)

    return {"schema": SCAN_SCHEMA, "params": p.as_dict(),
            "passed": all(r["pass"] for r in records), "checks": records}


def _asymptotic_records(primal: PrimalSolution, wealth: float) -> list[dict]:
    p = primal.params
    r_lim, pi_lim = primal.asymptotic_limits()
    h = primal.h_tilde(wealth)
    x = float(primal.x_splg(h))
    pol = primal.policy(x, h)
    return [
        {"name": "asymptotic_consumption_rate", "grid_point": {"h": h, "x": x},
         "value": abs(pol.c / x - r_lim) / p.r, "tolerance": 0.01,
         "pass": bool(abs(pol.c / x - r_lim) / p.r < 0.01)},
        {"name": "asymptotic_portfolio", "grid_point": {"h": h, "x": x},
         "value": abs(pol.pi - pi_lim) / pi_lim, "tolerance": 0.01,
         "pass": bool(abs(pol.pi - pi_lim) / pi_lim < 0.01)},
    ]


def _subsistence_records(primal: PrimalSolution, h_values) -> list[dict]:
    p = primal.params
    worst, where = 0.0, {}
    for h in h_values:
        for mult in (1.0, 1.5, 3.0):
            x = mult * h / p.r
            e = primal.evaluate(x, h)
            dev = max(abs(float(e["u"]) + 1 / (p.r * p.beta)), abs(float(e["pi"])),
                      abs(float(e["c"]) - h))
            if dev >= worst:
                worst, where = dev, {"h": float(h), "x": float(x)}
    return [{"name": "subsistence_region", "grid_point": where, "value": worst,
             "tolerance": 1e-12, "pass": bool(worst < 1e-12)}]


# ------------------------------------------------------ running maximum of BM
def _segment(c: float, lo: float, hi: float, T: float) -> float:
    """``int_lo^hi`` of ``e^{c m}`` against the density ``2 phi(m/sqrt T)/sqrt T``
    shifted by the drift, written with the normal CDF."""
    sq = math.sqrt(T)
    wl = (lo - c * T) / sq
    if math.isinf(hi):
        cdf_h, pdf_h = 1.0, 0.0
    else:
        wh = (hi - c * T) / sq
        cdf_h, pdf_h = float(ndtr(wh)), math.exp(-0.5 * wh * wh) / math.sqrt(2 * math.pi)
    pdf_l = math.exp(-0.5 * wl * wl) / math.sqrt(2 * math.pi)
    return math.exp(0.5 * c * c * T) * (2 * c * (cdf_h - float(ndtr(wl)))
                                        + 2 / sq * (pdf_l - pdf_h))


def brownian_max_formula(a: float, b: float, zeta: float, k: float, T: float) -> float:
    """``E[exp(a B_T + b M_T) 1{M_T <= k}]`` for ``B_t = W_t + zeta t``, ``M`` its running max.

    Integrating the joint reflection density over the endpoint first leaves
    one integral in the maximum, which splits at ``k``; the normalising
    constant is ``1/(2a + b + 2 zeta)``.
    """
    if k < 0 or T <= 0:
        raise DomainError("need k >= 0 and T > 0")
    gamma = 2 * a + b + 2 * zeta
    if gamma == 0:
        raise DomainError("2a + b + 2 zeta must be nonzero")
    alpha = a + zeta
    inner = _segment(gamma - alpha, 0.0, k, T) - _segment(-alpha, 0.0, k, T) \
        + math.expm1(gamma * k) * _segment(-alpha, k, math.inf, T)
    return math.exp(-0.5 * zeta * zeta * T) / gamma * inner


def reflection_cdf(zeta: float, k: float, T: float) -> float:
    """``P(M_T <= k)`` for Brownian motion with drift ``zeta``."""
    sq = math.sqrt(T)
    return float(ndtr((k - zeta * T) / sq) - math.exp(2 * zeta * k) * ndtr((-k - zeta * T) / sq))


def brownian_max_mc(a: float, b: float, zeta: float, k: float, T: float,
                    n_paths: int = 10 ** 6, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo estimate and standard error of the same expectation.

    The endpoint is drawn exactly and the maximum from its conditional law
    given the endpoint, ``M = (B + sqrt(B^2 - 2 T ln U))/2``, so there is
    no time-step bias.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 56])))
    bt = zeta * T + math.sqrt(T) * rng.standard_normal(n_paths)
    u = rng.random(n_paths)
    m = 0.5 * (bt + np.sqrt(bt * bt - 2 * T * np.log1p(-u)))
    vals = np.where(m <= k, np.exp(a * bt + b * m), 0.0)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths))
