"""Monte Carlo simulation of the dual process, the wealth SDE and the value.

Every path draws its own normals from a Philox generator keyed by
``(seed, pair_index)``, so path ``p`` is the same whatever the thread count
or the number of other paths.  With ``antithetic=True`` paths ``2k`` and
``2k+1`` share a key and use opposite normals.  Per-path results are stored
in arrays indexed by path and reduced at the end, so the estimates are
bit-identical across thread counts.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .dual import DualSolution
from .errors import BracketError, ConfigError, DomainError
from .model import LambdaCase
from .primal import PrimalSolution

THREADS_ENV = "SPENDMAX_THREADS"
# paths stepped together by the wealth kernel
BLOCK = 8


@dataclass(frozen=True)
class PathConfig:
    """Time grid and sampling options.

    Attributes
    ----------
    horizon : float
        Simulation horizon ``T`` in years.
    dt : float
        Step size.
    n_paths : int
    seed : int
        Nonnegative 64-bit seed.
    antithetic : bool
        Pair paths with mirrored normals.
    threads : int or None
        Worker threads; ``None`` reads ``SPENDMAX_THREADS`` (default 1).
    """

    horizon: float = 100.0
    dt: float = 1e-3
    n_paths: int = 1000
    seed: int = 0
    antithetic: bool = False
    threads: int | None = None

    def validate(self) -> "PathConfig":
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("dt must be positive")
        if not (self.horizon >= self.dt):
            raise ConfigError("horizon must be at least dt")
        if int(self.n_paths) < 1:
            raise ConfigError("n_paths must be at least 1")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ConfigError("seed must be a 64-bit nonnegative integer")
        if self.threads is not None and int(self.threads) < 1:
            raise ConfigError("threads must be positive")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def resolved_threads(self) -> int:
        if self.threads is not None:
            return int(self.threads)
        env = os.environ.get(THREADS_ENV, "").strip()
        try:
            return max(1, int(env)) if env else 1
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer") from exc


@dataclass
class SimPath:
    """One simulated path on the grid ``times`` (unused columns are None)."""

    times: np.ndarray
    w: np.ndarray
    y: np.ndarray | None = None
    h_hat: np.ndarray | None = None
    x: np.ndarray | None = None
    c: np.ndarray | None = None
    pi: np.ndarray | None = None
    h: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def columns(self) -> dict[str, np.ndarray]:
        cols = {"t": self.times, "w": self.w}
        for name in ("y", "h_hat", "x", "c", "pi", "h"):
            val = getattr(self, name)
            if val is not None:
                cols[name] = val
        return cols


@dataclass(frozen=True)
class MCEstimate:
    """Sample mean with standard error and a deterministic tail interval."""

    estimate: float
    se: float
    tail_lo: float = 0.0
    tail_hi: float = 0.0
    n_paths: int = 0

    def covers(self, target: float, n_se: float = 3.0) -> bool:
        lo = self.estimate + self.tail_lo - n_se * self.se
        hi = self.estimate + self.tail_hi + n_se * self.se
        return lo <= target <= hi


# --------------------------------------------------------------------- setup
def pack(dual: DualSolution):
    """Flatten the closed form into arrays for the compiled kernels."""
    p, k = dual.params, dual.constants
    mode = {LambdaCase.INTERIOR: 0, LambdaCase.ZERO: 1, LambdaCase.ONE: 2}[p.lambda_case]
    prm = np.array([mode, p.r, p.mu, p.sigma, p.beta, p.lam, k.r1, k.r2,
                    (p.mu - p.r) / p.sigma ** 2, k.kappa, p.rho], dtype=float)
    pw = np.zeros((3, 2))
    amp = np.zeros((3, 2, 3))
    rate = np.zeros((3, 2, 3))
    lin = np.zeros((3, 5))
    for i, form in enumerate(dual._forms):
        for j, (power, es) in enumerate(form.powers):
            pw[i, j] = power
            for m, (a, rt) in enumerate(zip(es.amps, es.rates)):
                amp[i, j, m] = a
                rate[i, j, m] = rt
        lin[i] = (form.alpha, form.b0, form.b1, form.k0, form.kr)
    return prm, pw, amp, rate, lin


def path_normals(cfg: PathConfig, path_index: int, n: int | None = None) -> np.ndarray:
    """Standard normals driving path ``path_index`` (reproducible per path)."""
    n = cfg.n_steps if n is None else n
    key = path_index // 2 if cfg.antithetic else path_index
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(cfg.seed), key])))
    z = gen.standard_normal(n)
    if cfg.antithetic and path_index % 2:
        z = -z
    return z


def normals_block(cfg: PathConfig, start: int, stop: int, n: int | None = None) -> np.ndarray:
    """Rows ``path_normals(cfg, i, n)`` for ``start <= i < stop``.

    Antithetic partners are negated copies, so each key is drawn once.
    """
    n = cfg.n_steps if n is None else n
    out = np.empty((stop - start, n))
    for i in range(start, stop):
        row = i - start
        if cfg.antithetic and i % 2 and row > 0:
            np.negative(out[row - 1], out=out[row])
        else:
            out[row] = path_normals(cfg, i, n)
    return out


def _coarsen(z: np.ndarray, m: int) -> np.ndarray:
    if m == 1:
        return z
    n = z.shape[0] // m
    return z[: n * m].reshape(n, m).sum(axis=1) / math.sqrt(m)


def _run_paths(fn, n_paths: int, threads: int):
    """Evaluate ``fn(i)`` for every path; results come back in path order."""
    if threads <= 1 or n_paths == 1:
        return [fn(i) for i in range(n_paths)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, range(n_paths), chunksize=max(1, n_paths // (8 * threads))))


def _run_blocks(fn, n_paths: int, threads: int, size: int = BLOCK):
    """Evaluate ``fn(start, stop)`` over consecutive path blocks, in order."""
    starts = list(range(0, n_paths, size))
    job = lambda a: fn(a, min(a + size, n_paths))  # noqa: E731
    if threads <= 1 or len(starts) == 1:
        parts = [job(a) for a in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(job, starts))
    return np.concatenate(parts, axis=0)


def _mean_se(vals: np.ndarray, antithetic: bool) -> tuple[float, float]:
    vals = np.asarray(vals, dtype=float)
    if antithetic and vals.shape[0] >= 2 and vals.shape[0] % 2 == 0:
        # pair averages are the independent samples
        vals = 0.5 * (vals[0::2] + vals[1::2])
    n = vals.shape[0]
    mean = math.fsum(vals) / n
    se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return mean, se


class Simulator:
    """Monte Carlo front end bound to one solved model.

    Parameters
    ----------
    model : PrimalSolution, DualSolution or ModelParams
    """

    def __init__(self, model):
        if not isinstance(model, PrimalSolution):
            model = PrimalSolution(model)
        self.primal = model
        self.dual = model.dual
        self.params = model.params
        self._tables = pack(self.dual)

    # ------------------------------------------------------------ helpers
    def _project_dual(self, y0: float, h0: float) -> float:
        p = self.params
        if y0 <= 0:
            raise DomainError("y0 must be positive")
        if p.lambda_case is LambdaCase.INTERIOR:
            _, _, ls = self.dual.log_thresholds(h0)
            if math.log(y0) < ls:
                return math.log(y0 / (1 - p.lam)) / ((p.lam - 1) * p.beta)
        return h0

    def _grid(self, cfg: PathConfig, n: int, dt: float):
        times = np.arange(n + 1) * dt
        return times

    # -------------------------------------------------------------- dual
    def simulate_dual_path(self, y0: float, h0: float, cfg: PathConfig,
                           path_index: int = 0, normals: np.ndarray | None = None,
                           coarsen: int = 1) -> SimPath:
        """Exact sample of ``Y`` with the running-minimum reference."""
        cfg.validate()
        h0 = self._project_dual(y0, h0)
        z = path_normals(cfg, path_index) if normals is None else np.asarray(normals, float)
        z = _coarsen(z, coarsen)
        dt = cfg.dt * coarsen
        n = z.shape[0]
        ly = np.empty(n + 1)
        hh = np.empty(n + 1)
        cc = np.empty(n + 1)
        xx = np.empty(n + 1)
        budget, _, _, _ = K.dual_path(math.log(y0), h0, dt, z, *self._tables, True,
                                      True, ly, hh, cc, xx)
        w = np.concatenate(([0.0], np.cumsum(z) * math.sqrt(dt)))
        return SimPath(times=self._grid(cfg, n, dt), w=w, y=np.exp(ly), h_hat=hh,
                       c=cc, x=xx, meta={"budget_truncated": budget, "h0": h0})

    def budget_tail_bound(self, y: float, h: float, horizon: float) -> float:
        """Upper bound on the consumption cost beyond ``horizon``.

        Consumption never exceeds the reference, and under the measure
        weighted by the state-price density the all-time minimum of
        ``ln Y - ln y`` is minus an Exp(1) variable, which gives the mean
        terminal reference in closed form.
        """
        p = self.params
        r = p.r
        if p.lambda_case is LambdaCase.ONE:
            h_inf = h
        elif p.lambda_case is LambdaCase.ZERO:
            k0 = math.log(y)
            # E[max(h, (E - ln y)/beta)] for E ~ Exp(1)
            kk = max(p.beta * h + k0, 0.0)
            h_inf = (kk + math.exp(-kk) - k0) / p.beta
        else:
            c0 = math.log(y) - math.log(1 - p.lam)
            scale = (1 - p.lam) * p.beta
            kk = max(scale * h + c0, 0.0)
            h_inf = (kk + math.exp(-kk) - c0) / scale
        return math.exp(-r * horizon) / r * h_inf

    def budget_functional(self, y, h: float, cfg: PathConfig):
        """Expected discounted consumption cost ``E[int c M dt]`` at dual state ``y``.

        ``y`` may be a vector; all entries then share the same paths.

        Returns
        -------
        MCEstimate or list of MCEstimate
            ``tail_hi`` holds the bound on the truncated part.
        """
        cfg.validate()
        ys = np.atleast_1d(np.asarray(y, dtype=float))
        if np.any(ys <= 0):
            raise DomainError("y must be positive")
        # points below the singular boundary lift the reference at t = 0,
        # which the kernel does on its first step
        h_eff = float(h)
        lys = np.log(ys)
        prm = self._tables[0]
        n = cfg.n_steps

        def one(i):
            out = np.empty(lys.shape[0])
            K.budget_many(lys, h_eff, cfg.dt, path_normals(cfg, i, n), prm, out)
            return out

        vals = np.array(_run_paths(one, cfg.n_paths, cfg.resolved_threads()))
        res = []
        for j, yy in enumerate(ys):
            mean, se = _mean_se(vals[:, j], cfg.antithetic)
            res.append(MCEstimate(mean, se, 0.0,
                                  self.budget_tail_bound(float(yy), self._project_dual(float(yy), h_eff), cfg.horizon),
                                  cfg.n_paths))
        return res if np.ndim(y) else res[0]

    def solve_ystar(self, x: float, h: float, cfg: PathConfig,
                    points_per_pass: int = 7, rtol: float = 1e-3) -> float:
        """Dual multiplier matching the budget to wealth ``x``.

        Starts from the closed-form ``f(x, h)``, expands the bracket by
        factors of 4 and then shrinks it with multi-point bisection: each
        pass evaluates ``points_per_pass`` interior points on common random
        numbers.  Stops when the bracket is narrower than ``rtol``
        (relative) or a point matches ``x`` within ``max(SE, 1e-3 x)``.
        """
        cfg.validate()
        if x <= 0:
            raise DomainError("x must be positive")
        x, h, _ = self.primal.project_to_domain(x, h)
        y0 = self.primal.f(x, h)
        b0 = self.budget_functional(y0, h, cfg)
        lo = hi = math.log(y0)
        tries = 0
        if b0.estimate > x:
            while True:
                hi += math.log(4.0)
                tries += 1
                if self.budget_functional(math.exp(hi), h, cfg).estimate <= x:
                    break
                lo = hi
                if tries > 60:
                    raise BracketError("upper bracket for y* not found")
        else:
            while True:
                lo -= math.log(4.0)
                tries += 1
                if self.budget_functional(math.exp(lo), h, cfg).estimate >= x:
                    break
                hi = lo
                if tries > 60:
                    raise BracketError("lower bracket for y* not found")
        for _ in range(64):
            if hi - lo < math.log1p(rtol):
                break
            zs = lo + (hi - lo) * np.arange(1, points_per_pass + 1) / (points_per_pass + 1)
            res = self.budget_functional(np.exp(zs), h, cfg)
            est = np.array([e.estimate for e in res])
            for z, e in zip(zs, res):
                if abs(e.estimate - x) < max(e.se, 1e-3 * x):
                    return float(math.exp(z))
            above = est > x  # budget decreasing in y: root lies to the right
            new_lo = zs[above][-1] if np.any(above) else lo
            new_hi = zs[~above][0] if np.any(~above) else hi
            lo, hi = new_lo, new_hi
        return float(math.exp(0.5 * (lo + hi)))

    # ------------------------------------------------------------- primal
    def simulate_primal_path(self, x0: float, h0: float, cfg: PathConfig,
                             path_index: int = 0, normals: np.ndarray | None = None,
                             coarsen: int = 1) -> SimPath:
        """Euler path of wealth under the optimal feedback policy."""
        cfg.validate()
        if x0 < 0 or h0 < 0:
            raise DomainError("x0 and h0 must be nonnegative")
        z = path_normals(cfg, path_index) if normals is None else np.asarray(normals, float)
        z = _coarsen(z, coarsen)
        dt = cfg.dt * coarsen
        n = z.shape[0]
        cols = [np.empty(n + 1) for _ in range(4)]
        acc, h_end, jumps = K.primal_path(x0, h0, dt, z, *self._tables, 0,
                                          np.zeros(3), True, *cols)
        w = np.concatenate(([0.0], np.cumsum(z) * math.sqrt(dt)))
        return SimPath(times=self._grid(cfg, n, dt), w=w, x=cols[0], h=cols[1],
                       h_hat=cols[1], c=cols[2], pi=cols[3],
                       meta={"value_truncated": acc, "jumps": int(jumps)})

    def baseline_policy(self, name: str, h0: float) -> tuple[int, np.ndarray]:
        """Kernel code and arguments for a named comparison policy."""
        p = self.params
        if name == "optimal":
            return 0, np.zeros(3)
        if name == "zero":
            return 1, np.zeros(3)
        if name == "constant":
            return 2, np.array([p.lam * h0, 0.0, 0.0])
        if name == "merton":
            # exponential-utility Merton rule with no reference effect
            k2 = ((p.mu - p.r) / p.sigma) ** 2
            c0 = (p.rho - p.r) / (p.r * p.beta) + k2 / (2 * p.r * p.beta)
            pi = (p.mu - p.r) / (p.r * p.beta * p.sigma ** 2)
            return 3, np.array([c0, p.r, pi])
        raise ConfigError(f"unknown policy {name!r}")

    def mc_value_estimate(self, x0: float, h0: float, cfg: PathConfig,
                          policy: str = "optimal") -> MCEstimate:
        """Sample mean of ``int_0^T exp(-rt) U(c - lam H) dt``.

        The tail interval is ``[-exp(lam beta H_max - rT)/(r beta), 0]`` with
        ``H_max`` the largest terminal reference over the paths.
        """
        cfg.validate()
        if x0 < 0 or h0 < 0:
            raise DomainError("x0 and h0 must be nonnegative")
        kind, args = self.baseline_policy(policy, h0)
        if kind == 0:
            x0, h0, _ = self.primal.project_to_domain(x0, h0)
        dummy = np.empty((1, 0))

        def block(a, b):
            z = normals_block(cfg, a, b)
            acc = np.empty(b - a)
            h_end = np.empty(b - a)
            jumps = np.empty(b - a, dtype=np.int64)
            K.primal_batch(x0, h0, cfg.dt, z, *self._tables, kind, args, False,
                           dummy, dummy, dummy, dummy, acc, h_end, jumps)
            return np.column_stack((acc, h_end))

        out = _run_blocks(block, cfg.n_paths, cfg.resolved_threads())
        mean, se = _mean_se(out[:, 0], cfg.antithetic)
        p = self.params
        h_max = float(out[:, 1].max())
        tail_lo = -math.exp(p.lam * p.beta * h_max - p.r * cfg.horizon) / (p.r * p.beta)
        return MCEstimate(mean, se, tail_lo, 0.0, cfg.n_paths)

    def dual_primal_consistency(self, x0: float, h0: float, cfg: PathConfig,
                                coarsen: int = 1) -> dict:
        """Pathwise gap between simulated wealth and ``g(Y, H_hat)``.

        For each path the dual process starts at ``f(x0, h0)`` and the
        wealth SDE at ``x0``, both driven by the same normals.  ``coarsen``
        sums consecutive normals so that a coarser grid follows the same
        Brownian path.

        Returns
        -------
        dict
            ``mean`` and ``max`` over paths of the per-path supremum of
            ``|X - g(Y, H_hat)|/(1 + |X|)``, plus ``h_gap``, the largest
            ``|H - H_hat|`` seen.
        """
        cfg.validate()
        x0, h0, _ = self.primal.project_to_domain(x0, h0)
        y0 = self.primal.f(x0, h0)
        sups, hgaps = [], []

        def one(i):
            z = path_normals(cfg, i)
            dp = self.simulate_dual_path(y0, h0, cfg, normals=z, coarsen=coarsen)
            pp = self.simulate_primal_path(x0, h0, cfg, normals=z, coarsen=coarsen)
            dev = np.abs(pp.x - dp.x) / (1.0 + np.abs(pp.x))
            return float(dev.max()), float(np.abs(pp.h - dp.h_hat).max())

        for s, g in _run_paths(one, cfg.n_paths, cfg.resolved_threads()):
            sups.append(s)
            hgaps.append(g)
        sups = np.array(sups)
        return {"mean": float(sups.mean()), "max": float(sups.max()),
                "h_gap": float(max(hgaps)), "dt": cfg.dt * coarsen,
                "n_paths": cfg.n_paths}

    def terminal_dual(self, y0: float, h0: float, cfg: PathConfig):
        """Per-path ``(ln Y_T, H_hat_T, v(Y_T, H_hat_T))`` arrays."""
        cfg.validate()
        h0 = self._project_dual(y0, h0)
        n = cfg.n_steps
        dummy = np.empty(0)

        def one(i):
            _, ly, hT, vT = K.dual_path(math.log(y0), h0, cfg.dt, path_normals(cfg, i, n),
                                        *self._tables, True, False,
                                        dummy, dummy, dummy, dummy)
            return ly, hT, vT

        out = np.array(_run_paths(one, cfg.n_paths, cfg.resolved_threads()))
        return out[:, 0], out[:, 1], out[:, 2]

    def transversality_probe(self, y0: float, h0: float, cfg: PathConfig,
                             horizons=(5.0, 20.0, 50.0)) -> list[MCEstimate]:
        """Sample means of ``exp(-rT) v(Y_T, H_hat_T)`` for each horizon."""
        out = []
        for T in horizons:
            ly, hT, vT = self.terminal_dual(y0, h0, replace(cfg, horizon=T))
            mean, se = _mean_se(math.exp(-self.params.r * T) * vT, cfg.antithetic)
            out.append(MCEstimate(mean, se, n_paths=cfg.n_paths))
        return out


def simulator(params_or_model) -> Simulator:
    return Simulator(params_or_model)
