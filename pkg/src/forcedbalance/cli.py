"""Command-line interface: ``forcedbalance <subcommand> ...``.

Exit codes: 0 success, 1 internal invariant failure, 2 user input error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import CRFB, PB, PM, DesignError, ResponseSpec
from .criteria import c_constant, mc_mse_quantile, tail_Q
from .designs import (
    DEFAULT_MAX_ENUMERATION_N,
    SearchConfig,
    build_design,
    enumerate_balanced,
    greedy_optimize,
)
from .io import read_covariates
from .simharness import (
    ScenarioConfig,
    ScenarioResult,
    density_export,
    preset,
    presets,
    rows_to_csv,
    run_scenario,
)
from .toy import ToyConfig, toy_enumerate_check, toy_eta, toy_table1

log = logging.getLogger("forcedbalance")


class UsageError(Exception):
    """Bad user input; exits with status 2."""


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _need_seed(args, why: str) -> int:
    if args.seed is None:
        raise UsageError(f"--seed is required {why}")
    return args.seed


def cmd_enumerate(args) -> int:
    W = enumerate_balanced(args.n, args.max_n)
    if args.format == "json":
        text = json.dumps(W.astype(int).tolist())
    elif args.format == "csv":
        text = _csv(range(args.n), W.astype(int).tolist())
    else:
        text = "\n".join(" ".join(f"{v:+d}" for v in row) for row in W.astype(int))
    _emit(text, args.out)
    return 0


def _design_for(args, X):
    kind = args.design.upper()
    n = X.shape[0]
    solver = args.pb_solver
    if kind == PB and (solver == "greedy" or (solver is None and n > DEFAULT_MAX_ENUMERATION_N)):
        seed = _need_seed(args, "for the greedy PB search")
        config = SearchConfig(restarts=args.restarts, seed=seed, threads=args.threads)
        return build_design(PB, X, config, pb_solver="greedy")
    return build_design(kind, X, SearchConfig(), pb_solver=solver)


def cmd_design(args) -> int:
    X = read_covariates(args.x)
    d = _design_for(args, X)
    if d.is_explicit:
        payload = d.to_dict()
        if d.pairs is not None:
            payload["pairs"] = [list(p) for p in d.pairs]
    else:
        payload = {"kind": d.kind, "n": d.n}
        if d.pairs is not None:
            payload["pairs"] = [list(p) for p in d.pairs]
    _emit(json.dumps(payload), args.out)
    return 0


def cmd_criteria(args) -> int:
    X = read_covariates(args.x)
    n = X.shape[0]
    if args.f is not None:
        f = read_covariates(args.f)[:, 0]
        if f.shape[0] != n:
            raise UsageError("f and x have different lengths")
    elif args.f_mode == "zero":
        f = np.zeros(n)
    else:
        f = X[:, 0].copy()
    d = _design_for(args, X)
    sigma = d.sigma()
    c = c_constant(args.c_mode, args.q) if args.c is None else args.c
    response = ResponseSpec(f=f, sigma2_z=args.sigma_z ** 2, kappa_z=args.kappa_z)
    report = tail_Q(response, sigma, c)
    report.design = d.kind
    if args.mc_draws:
        seed = _need_seed(args, "with --mc-draws")
        mc = mc_mse_quantile(f, d, args.sigma_z ** 2, args.q, args.mc_draws, 2, seed,
                             exact=True, threads=args.threads)
        report.mc_quantile = mc.quantile
    if args.format == "json":
        text = report.to_json()
    else:
        text = "\n".join(f"{k:<12} {v}" for k, v in report.to_dict().items())
    _emit(text, args.out)
    return 0


def cmd_toy(args) -> int:
    cfg = ToyConfig(m=args.m, a=args.a, delta=args.delta)
    formula = toy_table1(cfg)
    oracle = toy_enumerate_check(cfg)
    gap = max(abs(u - v) for u, v in zip(formula.as_tuple(), oracle.as_tuple()))
    if gap > 1e-10:
        raise AssertionError(f"formula and enumeration disagree by {gap:.3g}")
    eta = toy_eta(cfg)
    header = ["source", "design", "mean_observed_imbalance", "mean_unobserved_imbalance", "mse"]
    rows = []
    for source, table in (("formula", formula), ("enumeration", oracle)):
        for name, *vals in table.rows():
            rows.append([source, name, *vals])
    if args.format == "csv":
        text = _csv(header, rows)
    elif args.format == "json":
        text = json.dumps({"eta": eta, "formula": formula.as_tuple(),
                           "enumeration": oracle.as_tuple(), "max_abs_discrepancy": gap})
    else:
        lines = [f"m={cfg.m} a={cfg.a:g} delta={cfg.delta:g} eta={eta:.4f} "
                 f"threshold={np.sqrt((cfg.m - 1) / cfg.m):.4f}",
                 f"{'source':<12} {'design':<22} {'observed':>10} {'unobserved':>11} {'mse':>8}"]
        for source, name, o, u, m in rows:
            lines.append(f"{source:<12} {name:<22} {o:10.4f} {u:11.4f} {m:8.4f}")
        lines.append(f"max |formula - enumeration| = {gap:.3g}")
        text = "\n".join(lines)
    _emit(text, args.out)
    return 0


def _scenario_from_args(args) -> ScenarioConfig:
    seed = _need_seed(args, "for simulate")
    if args.config:
        data = json.loads(Path(args.config).read_text())
        data["seed"] = seed
        cfg = ScenarioConfig.from_dict(data)
    elif args.preset:
        cfg = preset(args.preset, seed=seed)
    else:
        raise UsageError("give --preset or --config; presets: "
                         + ", ".join(p.name for p in presets()))
    overrides = {}
    for name in ("n_z_draws", "n_w_draws", "greedy_restarts", "imbalance_ceiling"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if overrides:
        cfg = ScenarioConfig.from_dict({**cfg.__dict__, **overrides})
    return cfg


def cmd_simulate(args) -> int:
    cfg = _scenario_from_args(args)
    result = run_scenario(cfg, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(result.to_json())
    (out / "density.csv").write_text(rows_to_csv(density_export(result, args.bins)))
    table = result.summary_table()
    (out / "summary.txt").write_text(table + "\n")
    for w in result.warnings:
        log.warning(w)
    if args.summary:
        print(table)
    return 0


def cmd_export(args) -> int:
    result = ScenarioResult.from_dict(json.loads(Path(args.result).read_text()))
    _emit(rows_to_csv(density_export(result, args.bins)), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="forcedbalance",
        description="Forced-balance two-arm designs: construction and MSE criteria.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True, fmt=("json", "csv", "text"), default_fmt="json"):
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--format", choices=fmt, default=default_fmt)
        if seed:
            p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    p = sub.add_parser("enumerate", help="list every balanced allocation")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--max-n", type=int, default=DEFAULT_MAX_ENUMERATION_N)
    common(p, seed=False, default_fmt="csv")
    p.set_defaults(func=cmd_enumerate)

    def design_args(p):
        p.add_argument("--x", required=True, help="covariate file (.csv or .json)")
        p.add_argument("--design", choices=[CRFB, PB, PM], type=str.upper, required=True)
        p.add_argument("--pb-solver", choices=["brute", "greedy"])
        p.add_argument("--restarts", type=int, default=2000)

    p = sub.add_parser("design", help="build a CRFB, PB or PM design")
    design_args(p)
    common(p, fmt=("json",))
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("criteria", help="evaluate B1, B2, R, mean/var MSE and Q")
    design_args(p)
    p.add_argument("--f", help="file holding f (default: first covariate)")
    p.add_argument("--f-mode", choices=["x", "zero"], default="x")
    p.add_argument("--sigma-z", type=float, required=True)
    p.add_argument("--kappa-z", type=float, default=0.0)
    p.add_argument("--c-mode", choices=["gaussian", "chebyshev"], default="gaussian")
    p.add_argument("--c", type=float, help="explicit standard-error multiplier")
    p.add_argument("--q", type=float, default=0.95)
    p.add_argument("--mc-draws", type=int, default=0,
                   help="also estimate the q-quantile from this many Gaussian z draws")
    common(p, fmt=("json", "text"))
    p.set_defaults(func=cmd_criteria)

    p = sub.add_parser("toy", help="adversarial paired example: formulas vs enumeration")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    common(p, seed=False, default_fmt="text")
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("simulate", help="run a simulation scenario")
    p.add_argument("--preset", help="one of " + ", ".join(c.name for c in presets()))
    p.add_argument("--config", help="JSON scenario config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--bins", type=int, default=60)
    p.add_argument("--summary", action="store_true", help="print the per-design summary")
    p.add_argument("--n-z-draws", dest="n_z_draws", type=int)
    p.add_argument("--n-w-draws", dest="n_w_draws", type=int)
    p.add_argument("--greedy-restarts", dest="greedy_restarts", type=int)
    p.add_argument("--imbalance-ceiling", dest="imbalance_ceiling", type=float)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export", help="density CSV from a saved result.json")
    p.add_argument("--result", required=True)
    p.add_argument("--bins", type=int, default=60)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, DesignError, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AssertionError as exc:
        print(f"internal invariant failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
