"""Batch front-end: price scenarios from JSON configs, run the self-test.

Exit codes: 0 success, 1 self-test failure, 2 config/validation error,
3 solver failure (no convergence or numerical breakdown).
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import os
import sys

import numpy as np

from . import __version__
from .analysis import residual_risk, sensitivity_check
from .errors import ConfigError, NoConvergence, RegimeHedgeError
from .hedging import hedge_field, strategy_at
from .mc_oracle import mc_price
from .scenario import load_scenario
from .volterra_pricer import Grid, pde_residual, solve_price_field

_FMT = "%.17g"


def _fmt(v) -> str:
    return _FMT % float(v)


def _json_dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_price_field(field, report, csv_path, json_path):
    """Columnar CSV (t, s.., x.., y.., phi) plus a JSON header."""
    g = field.grid
    n, nc = g.n, g.n_components
    header = ["t"] + [f"s{l+1}" for l in range(n)] \
        + [f"x{m}" for m in range(nc)] + [f"y{m}" for m in range(nc)] + ["phi"]
    with open(csv_path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i, slab in enumerate(field.slabs):
            t = g.t_nodes[i]
            c = int(g.c_counts[i])
            for xi, x in enumerate(g.x_tuples):
                for y_idx in itertools.product(range(c), repeat=nc):
                    ages = [g.age_nodes[a] for a in y_idx]
                    block = slab[(xi,) + y_idx]
                    for s_idx in itertools.product(*[range(len(a))
                                                     for a in g.lns_axes]):
                        row = [_fmt(t)]
                        row += [_fmt(g.s_axes[l][s_idx[l]]) for l in range(n)]
                        row += [str(v) for v in x]
                        row += [_fmt(a) for a in ages]
                        row.append(_fmt(block[s_idx]))
                        fh.write(",".join(row) + "\n")
    _json_dump({"grid": g.describe(), "convergence": report.to_dict()},
               json_path)


def write_hedge_field(hf, field, csv_path):
    g = field.grid
    n, nc = g.n, g.n_components
    header = ["t"] + [f"s{l+1}" for l in range(n)] \
        + [f"x{m}" for m in range(nc)] + [f"y{m}" for m in range(nc)] \
        + [f"xi{l+1}" for l in range(n)] + ["eps"]
    with open(csv_path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(hf.xi)):
            t = g.t_nodes[i]
            c = int(g.c_counts[i])
            for xi_i, x in enumerate(g.x_tuples):
                for y_idx in itertools.product(range(c), repeat=nc):
                    ages = [g.age_nodes[a] for a in y_idx]
                    xi_block = hf.xi[i][(xi_i,) + y_idx]
                    eps_block = hf.eps[i][(xi_i,) + y_idx]
                    for s_idx in itertools.product(*[range(len(a))
                                                     for a in g.lns_axes]):
                        row = [_fmt(t)]
                        row += [_fmt(g.s_axes[l][s_idx[l]]) for l in range(n)]
                        row += [str(v) for v in x]
                        row += [_fmt(a) for a in ages]
                        row += [_fmt(xi_block[s_idx + (l,)]) for l in range(n)]
                        row.append(_fmt(eps_block[s_idx]))
                        fh.write(",".join(row) + "\n")


def write_surface(field, ep, path):
    """(t, s-grid) price slice at the evaluation point's regime and ages."""
    g = field.grid
    t0, s0, x, y = ep
    xi = g.x_index[tuple(x)]
    n = g.n
    header = ["t"] + [f"s{l+1}" for l in range(n)] + ["phi"]
    mesh = np.meshgrid(*g.s_axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i, t in enumerate(g.t_nodes):
            ages = np.minimum(np.asarray(y, dtype=float), t)
            vals = field.values(np.full(pts.shape[0], t), pts,
                                np.full(pts.shape[0], xi, dtype=int),
                                np.tile(ages, (pts.shape[0], 1)))
            for r in range(pts.shape[0]):
                row = [_fmt(t)] + [_fmt(v) for v in pts[r]] + [_fmt(vals[r])]
                fh.write(",".join(row) + "\n")


def _surface_name(ep):
    x_tag = "".join(str(v) for v in ep[2])
    y_tag = "-".join(f"{v:g}" for v in np.asarray(ep[3], dtype=float))
    return f"surface_{x_tag}_{y_tag}.csv"


def run_scenario(config_path: str, out_dir: str = ".", threads: int | None = None,
                 dry_run: bool = False) -> int:
    try:
        scn = load_scenario(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if threads is not None and threads > 0:
        scn.solver = dataclasses.replace(scn.solver, threads=threads)
        scn.threads = threads

    grid = Grid(scn.market, scn.horizon,
                np.stack([ep[1] for ep in scn.eval_points]), scn.grid_spec)
    if dry_run:
        print(json.dumps({"scenario": scn.name, "grid": grid.describe(),
                          "outputs": list(scn.outputs)}, sort_keys=True,
                         indent=2))
        return 0

    os.makedirs(out_dir, exist_ok=True)
    report = {"scenario": scn.name, "config": scn.resolved_dict()}
    try:
        field, conv = solve_price_field(scn.market, scn.claim, scn.models,
                                        grid, scn.tol, scn.max_iter,
                                        scn.solver)
    except NoConvergence as exc:
        report["error"] = {"type": "NoConvergence", "message": str(exc),
                           "convergence": exc.report.to_dict()
                           if exc.report else None}
        _json_dump(report, os.path.join(out_dir, "report.json"))
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    except RegimeHedgeError as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        _json_dump(report, os.path.join(out_dir, "report.json"))
        print(f"solver error: {exc}", file=sys.stderr)
        return 3

    report["convergence"] = conv.to_dict()
    points = []
    for ep in scn.eval_points:
        t, s, x, y = ep
        entry = {"t": t, "s": list(map(float, s)), "x": list(x),
                 "y": list(map(float, y)),
                 "price": field.value(t, s, x, y)}
        if "hedge-field" in scn.outputs:
            xi, eps = strategy_at(scn.market, scn.claim, scn.models, field,
                                  ep, settings=scn.solver)
            entry["xi"] = [float(v) for v in xi]
            entry["eps"] = float(eps)
        points.append(entry)
    report["eval_points"] = points

    if "price-field" in scn.outputs:
        write_price_field(field, conv, os.path.join(out_dir, "price_field.csv"),
                          os.path.join(out_dir, "price_field.json"))
        for ep in scn.eval_points:
            write_surface(field, ep, os.path.join(out_dir, _surface_name(ep)))
    if "hedge-field" in scn.outputs:
        hf = hedge_field(scn.market, scn.claim, scn.models, field, scn.solver)
        write_hedge_field(hf, field, os.path.join(out_dir, "hedge_field.csv"))
    if "mc-check" in scn.outputs:
        checks = []
        for ep in scn.eval_points:
            est, se = mc_price(scn.market, scn.claim, scn.models, ep,
                               scn.horizon, scn.mc_paths, scn.mc_seed,
                               antithetic=scn.mc_antithetic,
                               n_jobs=max(scn.threads, 1))
            price = field.value(*ep)
            checks.append({"price": price, "mc": est, "se": se,
                           "abs_diff": abs(price - est),
                           "within_3se": bool(abs(price - est) <= 3 * se)})
        report["mc_check"] = checks
    if "pde-residual" in scn.outputs:
        res = pde_residual(field, scn.market, scn.models,
                           maturity_margin_steps=max(
                               1, round(0.1 * scn.grid_spec.time_steps)))
        report["pde_residual"] = res.to_dict()
    if "sensitivity" in scn.outputs:
        tilde = [h.scaled(scn.sensitivity_scale) for h in scn.models]
        rep = sensitivity_check(scn.market, scn.claim, scn.models, tilde,
                                grid, scn.tol, scn.solver)
        report["sensitivity"] = rep.to_dict()
    if "residual-risk" in scn.outputs:
        rep = residual_risk(scn.market, scn.claim, scn.models, field,
                            scn.eval_points[0], scn.rr_paths, scn.rr_seed,
                            n_jobs=max(scn.threads, 1))
        report["residual_risk"] = rep.to_dict()

    _json_dump(report, os.path.join(out_dir, "report.json"))
    return 0


def run_selftest(profile: str = "full", threads: int = 1,
                 out_dir: str | None = None) -> int:
    from . import acceptance
    results = acceptance.run_all(profile=profile, threads=threads)
    rows = acceptance.render_table(results)
    print(rows)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "selftest_report.json"), "wb") as fh:
            fh.write(acceptance.report_bytes(results))
    return 0 if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="regimehedge",
        description="Pricing and hedging under componentwise semi-Markov "
                    "regime switching")
    sub = parser.add_subparsers(dest="command", required=True)

    p_price = sub.add_parser("price", help="run a scenario config")
    p_price.add_argument("config")
    p_price.add_argument("--out", default=".", help="output directory")
    p_price.add_argument("--threads", type=int, default=None)
    p_price.add_argument("--dry-run", action="store_true")

    p_self = sub.add_parser("selftest", help="run the acceptance suite")
    p_self.add_argument("--profile", choices=("full", "fast"), default="full")
    p_self.add_argument("--threads", type=int, default=1)
    p_self.add_argument("--out", default=None)

    sub.add_parser("version", help="print the version")

    args = parser.parse_args(argv)
    if args.command == "price":
        return run_scenario(args.config, args.out, args.threads, args.dry_run)
    if args.command == "selftest":
        return run_selftest(args.profile, args.threads, args.out)
    if args.command == "version":
        print(__version__)
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
