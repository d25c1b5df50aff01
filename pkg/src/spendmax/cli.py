"""Command line front end.

Subcommands write plot-ready tables (CSV by default) or JSON reports::

    spendmax boundaries --h-min 0 --h-max 3 --n 301
    spendmax boundaries --lambda-sweep 0.01 0.98 98 --h 1
    spendmax policy --h 1 --x-min 0 --x-max 20 --n 200
    spendmax sweep --param lambda --values 0.1,0.2,0.5,0.7,0.9
    spendmax simulate --x 10 --h 1 --horizon 60 --paths 10000
    spendmax verify --out report.json

``--params FILE`` reads either a JSON object or ``key = value`` lines
(``#`` starts a comment) with keys ``r, rho, mu, sigma, beta, lambda``;
``rho`` defaults to ``r``.  Without a file the baseline
``r=0.05, mu=0.1, sigma=0.25, beta=1, lambda=0.5`` is used, and
``--set key=value`` overrides single entries.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import verify
from .dual import DualSolution, Regime
from .errors import SpendmaxError
from .model import RhoCase, validate_params
from .primal import PrimalSolution
from .simulate import THREADS_ENV, PathConfig, Simulator

TABLE_SCHEMA = "spendmax.table/1"
SIMULATE_SCHEMA = "spendmax.simulate/1"
VERIFY_SCHEMA = "spendmax.verify/1"
BASELINE = {"r": 0.05, "mu": 0.1, "sigma": 0.25, "beta": 1.0, "lambda": 0.5}


class UsageError(Exception):
    """Invalid arguments; reported before any computation (exit code 2)."""


# ------------------------------------------------------------------ inputs
def read_params_file(path: str | os.PathLike) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    if text.lstrip().startswith("{"):
        try:
            return dict(json.loads(text))
        except ValueError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from exc
    out = {}
    for num, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{num}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key] = val
    return out


def load_params(args):
    raw = dict(BASELINE)
    if args.params:
        raw = read_params_file(args.params)
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, val = (s.strip() for s in item.split("=", 1))
        raw[key] = val
    try:
        return validate_params(raw)
    except SpendmaxError as exc:
        raise UsageError(f"invalid parameters: {exc}") from exc


def build_model(params, args) -> PrimalSolution:
    kw = {}
    if params.rho_case is RhoCase.GENERAL:
        kw = {"allow_rho_general": True,
              "convexity_probe": tuple(args.convexity_probe)}
    return PrimalSolution(DualSolution(params, **kw))


def resolve_threads(args) -> int | None:
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be positive")
        return args.threads
    return None  # PathConfig falls back to SPENDMAX_THREADS


# ----------------------------------------------------------------- outputs
def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(columns: list[str], rows: list[list], args, meta: dict | None = None):
    fmt = args.format or "csv"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        text = buf.getvalue()
    else:
        doc = {"schema": TABLE_SCHEMA, "columns": columns,
               "rows": [[_json_value(v) for v in row] for row in rows]}
        if meta:
            doc["meta"] = meta
        text = json.dumps(doc) + "\n"
    _emit(text, args.out)


def write_json(doc: dict, out):
    _emit(json.dumps(doc, indent=1, default=_json_value) + "\n", out)


def _json_value(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, np.ndarray):
        return [_json_value(x) for x in v.tolist()]
    return v


def _emit(text: str, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _linspace(lo: float, hi: float, n: int, what: str) -> np.ndarray:
    if n < 2:
        raise UsageError(f"{what}: n must be at least 2")
    if not hi > lo:
        raise UsageError(f"{what}: upper end must exceed lower end")
    return np.linspace(lo, hi, n)


# ---------------------------------------------------------------- commands
def cmd_boundaries(args) -> int:
    params = load_params(args)
    if args.lambda_sweep:
        lo, hi, n = args.lambda_sweep
        lams = _linspace(float(lo), float(hi), int(n), "--lambda-sweep")
        rows = []
        for lam in lams:
            model = build_model(params.replace(lam=float(lam)), args)
            b = model.boundaries(args.h)
            rows.append([lam, *b.as_tuple()])
        write_table(["lambda", "x_zero", "x_modr", "x_aggv", "x_splg"], rows, args,
                    {"h": args.h})
        return 0
    hs = _linspace(args.h_min, args.h_max, args.n, "boundaries")
    model = build_model(params, args)
    b = model.boundaries(hs)
    rows = [list(r) for r in zip(hs, *(np.broadcast_to(v, hs.shape) for v in b.as_tuple()))]
    write_table(["h", "x_zero", "x_modr", "x_aggv", "x_splg"], rows, args)
    return 0


def _policy_rows(model: PrimalSolution, h: float, xs: np.ndarray):
    e = model.evaluate(xs, h)
    # h is reported after projection: wealth above the singular boundary
    # lifts the reference first
    return [[x, u, c, pi, Regime(int(g)).label, hh]
            for x, u, c, pi, g, hh in zip(xs, e["u"], e["c"], e["pi"], e["regime"], e["h"])]


def cmd_policy(args) -> int:
    params = load_params(args)
    xs = _linspace(args.x_min, args.x_max, args.n, "policy")
    if args.x_min < 0:
        raise UsageError("policy: wealth must be nonnegative")
    model = build_model(params, args)
    write_table(["x", "u", "c", "pi", "regime", "h"], _policy_rows(model, args.h, xs), args,
                {"h": args.h})
    return 0


def cmd_sweep(args) -> int:
    params = load_params(args)
    key = {"lambda": "lam", "lam": "lam"}.get(args.param, args.param)
    if key not in ("r", "rho", "mu", "sigma", "beta", "lam"):
        raise UsageError(f"unknown sweep parameter {args.param!r}")
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError("--values must be comma separated numbers") from exc
    if not values:
        raise UsageError("--values is empty")
    xs = _linspace(args.x_min, args.x_max, args.n, "sweep")
    models = []
    for val in values:
        raw = params.as_dict()
        raw["lambda" if key == "lam" else key] = val
        if key == "r" and params.rho_case is RhoCase.EQUAL:
            raw["rho"] = val
        try:
            models.append(build_model(validate_params(raw), args))
        except SpendmaxError as exc:
            raise UsageError(f"{args.param}={val}: {exc}") from exc
    rows = []
    for val, model in zip(values, models):
        rows += [[val, *row] for row in _policy_rows(model, args.h, xs)]
    write_table([args.param, "x", "u", "c", "pi", "regime", "h"], rows, args, {"h": args.h})
    return 0


def cmd_simulate(args) -> int:
    params = load_params(args)
    if args.x < 0 or args.h < 0:
        raise UsageError("simulate: x and h must be nonnegative")
    cfg = PathConfig(horizon=args.horizon, dt=args.dt, n_paths=args.paths,
                     seed=args.seed, antithetic=args.antithetic,
                     threads=resolve_threads(args))
    try:
        cfg.validate()
    except SpendmaxError as exc:
        raise UsageError(str(exc)) from exc
    model = build_model(params, args)
    sim = Simulator(model)
    x0, h0, jumped = model.project_to_domain(args.x, args.h)
    summary = {"schema": SIMULATE_SCHEMA, "params": params.as_dict(),
               "config": {"horizon": cfg.horizon, "dt": cfg.dt, "paths": cfg.n_paths,
                          "seed": cfg.seed, "antithetic": cfg.antithetic},
               "x0": args.x, "h0": args.h, "h_after_projection": h0,
               "initial_jump": bool(jumped)}

    est = sim.mc_value_estimate(x0, h0, cfg)
    u = model.value_u(x0, h0)
    summary["value"] = {"closed_form": u, "mc_truncated": est.estimate, "se": est.se,
                        "tail_interval": [est.tail_lo, est.tail_hi],
                        "covered_3se_plus_tail": est.covers(u)}
    if x0 > 0:
        y0 = float(model.f(x0, h0))
        bcfg = replace(cfg, n_paths=min(cfg.n_paths, args.budget_paths))
        b = sim.budget_functional(y0, h0, bcfg)
        summary["budget"] = {"y": y0, "x": x0, "estimate": b.estimate, "se": b.se,
                             "tail_bound": b.tail_hi, "paths": bcfg.n_paths}
    ccfg = replace(cfg, horizon=min(cfg.horizon, args.consistency_horizon),
                   n_paths=min(cfg.n_paths, args.consistency_paths))
    summary["consistency"] = sim.dual_primal_consistency(x0, h0, ccfg)

    out_dir = Path(args.out) if args.out not in (None, "-") else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        n_dump = min(args.dump_paths, cfg.n_paths)
        if n_dump:
            _dump_paths(sim, x0, h0, cfg, n_dump, out_dir / "paths.csv")
            summary["path_dump"] = "paths.csv"
        write_json(summary, out_dir / "summary.json")
    else:
        write_json(summary, None)
    return 0


def _dump_paths(sim: Simulator, x0, h0, cfg, n_dump: int, path: Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "t", "w", "x", "c", "pi", "h"])
        stride = max(1, int(round(0.01 / cfg.dt)))
        for i in range(n_dump):
            sp = sim.simulate_primal_path(x0, h0, cfg, path_index=i)
            for k in range(0, sp.times.shape[0], stride):
                w.writerow([i, *(_fmt(col[k]) for col in
                                 (sp.times, sp.w, sp.x, sp.c, sp.pi, sp.h))])


def cmd_verify(args) -> int:
    params = load_params(args)
    model = build_model(params, args)
    grid = verify.ScanGrid()
    if params.rho_case is RhoCase.GENERAL:
        lo, hi = args.convexity_probe
        grid = replace(grid, h_values=tuple(np.linspace(lo, hi, 20)))
    report = verify.scan_report(model, grid)
    bvp = []
    for h in (grid.h_values[len(grid.h_values) // 4], grid.h_values[-1]):
        rep = verify.bvp_oracle(model, float(h))
        ok = rep.max_rel_dev < 1e-5
        bvp.append({"name": "bvp_oracle", "grid_point": {"h": rep.h},
                    "value": rep.max_rel_dev, "tolerance": 1e-5, "pass": bool(ok)})
    checks = report["checks"] + bvp
    doc = {"schema": VERIFY_SCHEMA, "params": report["params"],
           "passed": all(c["pass"] for c in checks), "checks": checks}
    write_json(doc, args.out)
    return 0 if doc["passed"] else 1


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--params", metavar="FILE", help="parameter file (JSON or key = value)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one parameter (repeatable)")
    common.add_argument("--out", metavar="PATH", help="output file or directory; '-' is stdout")
    common.add_argument("--format", choices=("csv", "json"), help="table format (default csv)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (fallback: ${THREADS_ENV}, then 1)")
    common.add_argument("--convexity-probe", type=float, nargs=2, default=(0.0, 10.0),
                        metavar=("H_LO", "H_HI"),
                        help="reference range checked when rho != r")

    ap = argparse.ArgumentParser(prog="spendmax", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("boundaries", parents=[common], help="free-boundary curves")
    p.add_argument("--h-min", type=float, default=0.0)
    p.add_argument("--h-max", type=float, default=3.0)
    p.add_argument("--n", type=int, default=301)
    p.add_argument("--lambda-sweep", nargs=3, metavar=("LO", "HI", "N"),
                   help="tabulate against lambda at fixed --h instead")
    p.add_argument("--h", type=float, default=1.0)
    p.set_defaults(func=cmd_boundaries)

    p = sub.add_parser("policy", parents=[common], help="value and controls over wealth")
    p.add_argument("--h", type=float, default=1.0)
    p.add_argument("--x-min", type=float, default=0.0)
    p.add_argument("--x-max", type=float, default=20.0)
    p.add_argument("--n", type=int, default=200)
    p.set_defaults(func=cmd_policy)

    p = sub.add_parser("sweep", parents=[common], help="policy tables across a parameter")
    p.add_argument("--param", required=True, help="lambda, mu, sigma, r, rho or beta")
    p.add_argument("--values", required=True, help="comma separated values")
    p.add_argument("--h", type=float, default=1.0)
    p.add_argument("--x-min", type=float, default=0.0)
    p.add_argument("--x-max", type=float, default=20.0)
    p.add_argument("--n", type=int, default=200)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo summary and path dumps")
    p.add_argument("--x", type=float, default=10.0)
    p.add_argument("--h", type=float, default=1.0)
    p.add_argument("--horizon", type=float, default=60.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--antithetic", action="store_true")
    p.add_argument("--budget-paths", type=int, default=1000)
    p.add_argument("--consistency-paths", type=int, default=100)
    p.add_argument("--consistency-horizon", type=float, default=5.0)
    p.add_argument("--dump-paths", type=int, default=5,
                   help="paths written to paths.csv when --out is a directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", parents=[common], help="closed-form checks as a JSON report")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        ap.error(str(exc))  # exits with status 2
    except SpendmaxError as exc:
        print(f"spendmax: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"spendmax: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
