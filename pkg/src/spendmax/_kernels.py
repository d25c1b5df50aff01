"""Compiled per-path kernels for the Monte Carlo module.

The closed form is passed in as flat arrays (see ``pack``):

    prm  = [mode, r, mu, sigma, beta, lam, r1, r2, kpi, kappa, rho]
    pw   [3, 2]      powers per region
    amp  [3, 2, 3]   amplitudes of exp(rate*beta*h) per power
    rate [3, 2, 3]
    lin  [3, 5]      alpha, b0, b1, k0, kr per region

mode 0 is 0 < lam < 1, mode 1 is lam = 0, mode 2 is lam = 1.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

NAN = math.nan
TOL = 1e-12
STEP_TOL = 1e-5


@njit(cache=True, nogil=True, error_model="numpy")
def _coefs(h, prm, amp, rate, out):
    beta = prm[4]
    for i in range(3):
        for j in range(2):
            s = 0.0
            for k in range(3):
                if amp[i, j, k] != 0.0:
                    s += amp[i, j, k] * math.exp(rate[i, j, k] * beta * h)
            out[i, j] = s


@njit(cache=True, nogil=True, error_model="numpy")
def _g(reg, z, h, C, pw, lin):
    # wealth -v_y and its z-derivative for one region at y = exp(z)
    g = 0.0
    dg = 0.0
    for j in range(2):
        c = C[reg, j]
        if c != 0.0:
            p = pw[reg, j]
            e = c * p * math.exp((p - 1.0) * z)
            g -= e
            dg -= (p - 1.0) * e
    alpha = lin[reg, 0]
    if alpha != 0.0:
        g -= alpha * (z + 1.0)
        dg -= alpha
    g -= lin[reg, 1] + lin[reg, 2] * h
    return g, dg


@njit(cache=True, nogil=True, error_model="numpy")
def _log_thresholds(h, prm):
    mode = int(prm[0])
    beta = prm[4]
    lam = prm[5]
    za = lam * beta * h
    zb = (lam - 1.0) * beta * h
    zs = -np.inf
    if mode == 0:
        zs = math.log(1.0 - lam) + zb
    elif mode == 1:
        za = 0.0
        zb = -np.inf
    return za, zb, zs


@njit(cache=True, nogil=True, error_model="numpy")
def _refresh(h, prm, pw, amp, rate, lin, C, th):
    """Coefficients and thresholds at reference h.

    th = [za, zb, zs, x_zero, x_aggv, x_splg]
    """
    _coefs(h, prm, amp, rate, C)
    za, zb, zs = _log_thresholds(h, prm)
    mode = int(prm[0])
    th[0] = za
    th[1] = zb
    th[2] = zs
    th[3] = _g(0, za, h, C, pw, lin)[0]
    if mode == 1:
        th[4] = np.inf
        th[5] = np.inf
    else:
        th[4] = _g(1, zb, h, C, pw, lin)[0]
        if mode == 2:
            th[5] = h / prm[1]
        else:
            th[5] = _g(2, zs, h, C, pw, lin)[0]


@njit(cache=True, nogil=True, error_model="numpy")
def _newton(reg, x, h, lo, hi, z, C, pw, lin):
    """Safeguarded Newton for g_reg(z) = x on [lo, hi] (g decreasing).

    Returns (z, dg/dz).  Once a Newton step is below STEP_TOL the updated
    iterate is accepted: quadratic convergence puts its error near
    STEP_TOL**2.
    """
    if z <= lo or z >= hi or not math.isfinite(z):
        z = 0.5 * (lo + hi)
    dg = -1.0
    for _ in range(200):
        g, dg = _g(reg, z, h, C, pw, lin)
        err = g - x
        if err == 0.0:
            return z, dg
        if err > 0.0:
            lo = z
        else:
            hi = z
        step = err / dg
        zn = z - step
        if not (zn > lo and zn < hi):
            zn = 0.5 * (lo + hi)
        elif abs(step) <= STEP_TOL * max(1.0, abs(z)):
            return zn, dg
        if abs(zn - z) <= TOL * max(1.0, abs(z)):
            return zn, dg
        z = zn
    return z, dg


@njit(cache=True, nogil=True, error_model="numpy")
def _splg_at(h, prm, pw, amp, rate):
    """x_splg(h) and its h-derivative (mode 0 only)."""
    beta = prm[4]
    lam = prm[5]
    l1 = math.log(1.0 - lam)
    x = h / prm[1]
    dx = 1.0 / prm[1]
    for j in range(2):
        p = pw[2, j]
        for k in range(3):
            a = amp[2, j, k]
            if a != 0.0:
                slope = rate[2, j, k] * beta + (p - 1.0) * (lam - 1.0) * beta
                e = a * p * math.exp(rate[2, j, k] * beta * h + (p - 1.0) * l1
                                     + (p - 1.0) * (lam - 1.0) * beta * h)
                x -= e
                dx -= slope * e
    return x, dx


@njit(cache=True, nogil=True, error_model="numpy")
def _h_tilde(x, h_lo, prm, pw, amp, rate):
    """Solve x_splg(h) = x for h >= h_lo (x above x_splg(h_lo))."""
    lo = h_lo
    step = max(1.0, h_lo)
    hi = h_lo + step
    for _ in range(80):
        if _splg_at(hi, prm, pw, amp, rate)[0] >= x:
            break
        lo = hi
        step *= 2.0
        hi = h_lo + step
    h = 0.5 * (lo + hi)
    for _ in range(200):
        f, df = _splg_at(h, prm, pw, amp, rate)
        err = f - x
        if err == 0.0:
            return h
        if err < 0.0:
            lo = h
        else:
            hi = h
        hn = h - err / df
        if not (hn > lo and hn < hi):
            hn = 0.5 * (lo + hi)
        if abs(hn - h) <= 1e-14 * max(1.0, h):
            return hn
        h = hn
    return h


@njit(cache=True, nogil=True, error_model="numpy")
def _gs(z, a1, a2, q1, q2, al, base):
    """Scalar form of _g with the second derivative: a_j = C_j p_j, q_j = p_j - 1."""
    e1 = a1 * math.exp(q1 * z)
    e2 = a2 * math.exp(q2 * z)
    return (-e1 - e2 - al * (z + 1.0) - base, -q1 * e1 - q2 * e2 - al,
            -q1 * q1 * e1 - q2 * q2 * e2)


@njit(cache=True, nogil=True, error_model="numpy")
def _newton_s(x, lo, hi, z, a1, a2, q1, q2, al, base):
    """Safeguarded Newton on scalars; returns (z, dg/dz).

    Once a Newton step is below STEP_TOL the updated iterate is accepted:
    quadratic convergence puts its error near STEP_TOL**2, and dg is carried
    to it by one Taylor term.
    """
    if not (z > lo and z < hi):
        z = 0.5 * (lo + hi)
    dg = -1.0
    for _ in range(200):
        g, dg, d2g = _gs(z, a1, a2, q1, q2, al, base)
        err = g - x
        if err == 0.0:
            return z, dg
        if err > 0.0:
            lo = z
        else:
            hi = z
        step = err / dg
        zn = z - step
        if not (zn > lo and zn < hi):
            zn = 0.5 * (lo + hi)
        elif abs(step) <= STEP_TOL * max(1.0, abs(z)):
            return zn, dg - d2g * step
        if abs(zn - z) <= TOL * max(1.0, abs(z)):
            return zn, dg
        z = zn
    return z, dg


@njit(cache=True, nogil=True, error_model="numpy")
def _state(h, prm, pw, amp, rate, lin):
    """Scalars the policy needs at reference h.

    Returns (k0, a11, a12, al1, base1, a21, a22, base2, za, zb, zs, x_zero,
    x_aggv, x_splg) where k0 = -r2 C2 gives x = k0 exp((r2 - 1) z) on the
    zero-consumption branch.
    """
    C = np.empty((3, 2))
    th = np.empty(6)
    _refresh(h, prm, pw, amp, rate, lin, C, th)
    return (-pw[0, 1] * C[0, 1] - pw[0, 0] * C[0, 0],
            C[1, 0] * pw[1, 0], C[1, 1] * pw[1, 1], lin[1, 0], lin[1, 1] + lin[1, 2] * h,
            C[2, 0] * pw[2, 0], C[2, 1] * pw[2, 1], lin[2, 1] + lin[2, 2] * h,
            th[0], th[1], th[2], th[3], th[4], th[5])


@njit(cache=True, nogil=True, error_model="numpy")
def primal_batch(x0, h0, dt, normals, prm, pw, amp, rate, lin, policy_kind,
                 pol_args, rec, out_x, out_h, out_c, out_pi, out_acc, out_hend,
                 out_jumps):
    """Euler scheme for the wealth SDE under a feedback policy.

    Each row of ``normals`` drives one path; rows are stepped together so
    that their serial dependency chains overlap, and every row sees exactly
    the arithmetic it would see alone.  policy_kind 0 is the optimal
    policy; 1 zero consumption and no risky holding; 2 constant
    consumption pol_args[0] with no risky holding; 3 affine consumption
    pol_args[0] + pol_args[1]*x with constant risky holding pol_args[2].
    Per row results: discounted utility integral, final H and number of
    reference jumps.  With ``rec`` the 2-d out_* arrays receive the path.
    """
    mode = int(prm[0])
    r = prm[1]
    mu = prm[2]
    sigma = prm[3]
    beta = prm[4]
    lam = prm[5]
    r1 = prm[6]
    r2 = prm[7]
    kpi = prm[8]
    q1 = r1 - 1.0
    q2 = r2 - 1.0
    m, n = normals.shape
    sq = math.sqrt(dt)
    st0 = _state(h0, prm, pw, amp, rate, lin)
    S = np.empty((m, 14))
    X = np.empty(m)
    H = np.empty(m)
    Z = np.zeros(m)
    DG = np.zeros(m)
    XP = np.empty(m)
    for i in range(m):
        for j in range(14):
            S[i, j] = st0[j]
        X[i] = x0
        H[i] = h0
        XP[i] = x0
        out_acc[i] = 0.0
        out_jumps[i] = 0
    disc = dt
    edt = math.exp(-r * dt)
    for k in range(n + 1):
        for i in range(m):
            x = X[i]
            h = H[i]
            z = Z[i]
            dg = DG[i]
            reg = -1
            if x <= 0.0:
                x = 0.0
                c = 0.0
                pi = 0.0
            elif policy_kind == 0:
                xs = S[i, 13]
                if mode == 0 and x > xs * (1.0 + TOL):
                    h = _h_tilde(x, h, prm, pw, amp, rate)
                    st = _state(h, prm, pw, amp, rate, lin)
                    for j in range(14):
                        S[i, j] = st[j]
                    out_jumps[i] += 1
                    xs = S[i, 13]
                k0 = S[i, 0]
                za = S[i, 8]
                zb = S[i, 9]
                zs = S[i, 10]
                # first-order predictor from the previous solve
                z0 = z
                if dg != 0.0:
                    z0 = z + (x - XP[i]) / dg
                XP[i] = x
                if x <= S[i, 11]:
                    reg = 0
                    c = 0.0
                    pi = kpi * (1.0 - r2) * x
                    z = math.log(x / k0) / q2
                    dg = q2 * x
                elif x < S[i, 12]:
                    reg = 1
                    a11 = S[i, 1]
                    a12 = S[i, 2]
                    al1 = S[i, 3]
                    base1 = S[i, 4]
                    lo = zb
                    if mode == 1:
                        lo = za - 1.0
                        step = 1.0
                        while _gs(lo, a11, a12, q1, q2, al1, base1)[0] < x:
                            step *= 2.0
                            lo = za - step
                    z, dg = _newton_s(x, lo, za, z0, a11, a12, q1, q2, al1, base1)
                    c = lam * h - z / beta
                    pi = -kpi * dg
                elif mode == 2:
                    c = h
                    if x >= xs:
                        reg = 5
                        pi = 0.0
                        dg = 0.0
                    else:
                        reg = 2
                        z = math.log((h / r - x) / S[i, 5]) / q1
                        dg = -q1 * (h / r - x)
                        pi = -kpi * dg
                else:
                    c = h
                    a21 = S[i, 5]
                    a22 = S[i, 6]
                    base2 = S[i, 7]
                    if x >= xs * (1.0 - TOL):
                        reg = 3
                        z = zs
                        dg = _gs(zs, a21, a22, q1, q2, 0.0, base2)[1]
                    else:
                        reg = 2
                        z, dg = _newton_s(x, zs, zb, z0, a21, a22, q1, q2, 0.0, base2)
                    pi = -kpi * dg
            elif policy_kind == 1:
                c = 0.0
                pi = 0.0
            elif policy_kind == 2:
                c = pol_args[0]
                pi = 0.0
            else:
                c = max(0.0, pol_args[0] + pol_args[1] * x)
                pi = pol_args[2]
            if c > h:
                h = c
                if policy_kind == 0:
                    st = _state(h, prm, pw, amp, rate, lin)
                    for j in range(14):
                        S[i, j] = st[j]
            if rec:
                out_x[i, k] = x
                out_h[i, k] = h
                out_c[i, k] = c
                out_pi[i, k] = pi
            H[i] = h
            Z[i] = z
            DG[i] = dg
            if k < n:
                if reg == 1:
                    # exp(-beta (c - lam h)) = y on the interior branch
                    ut = -math.exp(z) / beta
                else:
                    ut = -math.exp(-beta * (c - lam * h)) / beta
                out_acc[i] += disc * ut
                x = x + (r * x + pi * (mu - r) - c) * dt + pi * sigma * sq * normals[i, k]
                if x < 0.0:
                    x = 0.0
            X[i] = x
        disc *= edt
    for i in range(m):
        out_hend[i] = H[i]


def primal_path(x0, h0, dt, normals, prm, pw, amp, rate, lin, policy_kind,
                pol_args, rec, out_x, out_h, out_c, out_pi):
    """Single path form of primal_batch; returns (integral, H_end, jumps)."""
    acc = np.empty(1)
    hend = np.empty(1)
    jumps = np.empty(1, dtype=np.int64)
    if rec:
        ox, oh, oc, op = (a.reshape(1, -1) for a in (out_x, out_h, out_c, out_pi))
    else:
        ox = oh = oc = op = np.empty((1, 0))
    primal_batch(x0, h0, dt, np.ascontiguousarray(normals).reshape(1, -1), prm, pw,
                 amp, rate, lin, policy_kind, pol_args, rec, ox, oh, oc, op, acc,
                 hend, jumps)
    return acc[0], hend[0], int(jumps[0])


@njit(cache=True, nogil=True, error_model="numpy")
def dual_path(ly0, h0, dt, normals, prm, pw, amp, rate, lin, want_x, rec,
              out_ly, out_h, out_c, out_x):
    """Exact log-dual path with discrete running-minimum reference.

    Returns (budget integral sum c M dt, ln Y_T, H_T, v(Y_T, H_T)).
    """
    r = prm[1]
    beta = prm[4]
    lam = prm[5]
    kappa = prm[9]
    mode = int(prm[0])
    n = normals.shape[0]
    sq = math.sqrt(dt)
    drift = -0.5 * kappa * kappa * dt
    C = np.empty((3, 2))
    h = h0
    if want_x:
        _coefs(h, prm, amp, rate, C)
    ly = ly0
    lmin = ly0
    l1 = 0.0
    if mode == 0:
        l1 = math.log(1.0 - lam)
    acc = 0.0
    c = 0.0
    for k in range(n + 1):
        if ly < lmin:
            lmin = ly
        if mode == 0:
            hn = (lmin - l1) / ((lam - 1.0) * beta)
            if hn > h:
                h = hn
                if want_x:
                    _coefs(h, prm, amp, rate, C)
        za = lam * beta * h
        zb = (lam - 1.0) * beta * h
        if mode == 1:
            za = 0.0
            zb = -np.inf
        if ly >= za:
            c = 0.0
        elif ly > zb:
            c = lam * h - ly / beta
        else:
            c = h
        if mode == 1 and c > h:
            h = c
        if rec:
            out_ly[k] = ly
            out_h[k] = h
            out_c[k] = c
            if want_x:
                reg = 0 if ly >= za else (1 if ly > zb else 2)
                out_x[k] = _g(reg, ly, h, C, pw, lin)[0]
        if k == n:
            break
        t = k * dt
        acc += c * math.exp(-r * t + ly - ly0) * dt
        ly = ly + drift - kappa * sq * normals[k]
    vT = NAN
    if want_x:
        za = lam * beta * h
        zb = (lam - 1.0) * beta * h
        if mode == 1:
            za = 0.0
            zb = -np.inf
        reg = 0 if ly >= za else (1 if ly > zb else 2)
        vT = _v(reg, ly, h, C, pw, lin, prm)
    return acc, ly, h, vT


@njit(cache=True, nogil=True, error_model="numpy")
def _v(reg, z, h, C, pw, lin, prm):
    beta = prm[4]
    y = math.exp(z)
    v = 0.0
    for j in range(2):
        if C[reg, j] != 0.0:
            v += C[reg, j] * math.exp(pw[reg, j] * z)
    v += lin[reg, 0] * y * z + (lin[reg, 1] + lin[reg, 2] * h) * y
    if lin[reg, 3] != 0.0:
        v += lin[reg, 3] * math.exp(lin[reg, 4] * beta * h)
    return v


@njit(cache=True, nogil=True, error_model="numpy")
def budget_many(lys, h0, dt, normals, prm, out):
    """Budget integrals for several initial ln y on one set of normals."""
    r = prm[1]
    beta = prm[4]
    lam = prm[5]
    kappa = prm[9]
    mode = int(prm[0])
    n = normals.shape[0]
    sq = math.sqrt(dt)
    drift = -0.5 * kappa * kappa * dt
    l1 = math.log(1.0 - lam) if mode == 0 else 0.0
    m = lys.shape[0]
    # path of L_t = ln Y_t - ln y and its running minimum are shared
    for i in range(m):
        out[i] = 0.0
    L = 0.0
    Lmin = 0.0
    hs = np.empty(m)
    for i in range(m):
        hs[i] = h0
    for k in range(n):
        if L < Lmin:
            Lmin = L
        disc = math.exp(-r * k * dt + L) * dt
        for i in range(m):
            ly = lys[i] + L
            h = hs[i]
            if mode == 0:
                hn = (lys[i] + Lmin - l1) / ((lam - 1.0) * beta)
                if hn > h:
                    h = hn
                    hs[i] = h
            za = lam * beta * h
            zb = (lam - 1.0) * beta * h
            if mode == 1:
                za = 0.0
                zb = -np.inf
            if ly >= za:
                c = 0.0
            elif ly > zb:
                c = lam * h - ly / beta
            else:
                c = h
            if mode == 1 and c > h:
                hs[i] = c
            out[i] += c * disc
        L = L + drift - kappa * sq * normals[k]
