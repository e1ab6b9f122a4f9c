"""Command-line interface: ``nestedtrial {estimate,simulate,calibrate,verify}``.

Exit codes: 0 success, 1 input or configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bootstrap import DEFAULT_SEED, BootstrapConfig, BootstrapError, bootstrap_ci
from .data import SchemaError, read_csv
from .estimators import (
    ALL_ESTIMATORS,
    POPULATION_ESTIMATORS,
    TABLE_LABELS,
    Analysis,
    EstimationError,
    contrast_value,
    estimate,
)
from .glm import GlmError
from .oracle import plugin_estimand, spec_from_dataset, to_dataset
from .simulation import (
    CalibrationError,
    calibrate_intercept,
    calibrate_tau_binary,
    expand_grid,
    expected_expit,
    marginal_log_or,
    run_factorial,
    write_summary_csv,
)

log = logging.getLogger("nestedtrial")

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2
NUMERIC_ERRORS = (GlmError, EstimationError, BootstrapError, CalibrationError, FloatingPointError)
USER_ERRORS = (SchemaError, ValueError, KeyError, FileNotFoundError, yaml.YAMLError)


def _add_columns(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", "-i", required=True, help="delimited cohort file with header")
    p.add_argument("--participation", default="S", help="0/1 trial participation column (default S)")
    p.add_argument("--treatment", default="A", help="treatment column, empty for non-participants")
    p.add_argument("--outcome", default="Y", help="outcome column, empty for non-participants")
    p.add_argument("--covariates", nargs="+", required=True, help="baseline covariate columns")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nestedtrial",
        description="Treatment effects in all trial-eligible individuals from a trial nested in a cohort.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="point estimates and bootstrap intervals")
    est.add_argument("--config", type=Path, help="YAML file whose keys default the options below")
    _add_columns(est)
    est.add_argument("--participation-covariates", nargs="+", help="default: --covariates")
    est.add_argument("--outcome-covariates", nargs="+", help="default: --covariates")
    est.add_argument("--treatment-covariates", nargs="*", default=[], help="default: intercept only")
    est.add_argument("--estimators", nargs="+", default=[e.value for e in ALL_ESTIMATORS],
                     choices=[e.value for e in ALL_ESTIMATORS])
    est.add_argument("--contrasts", nargs="+", default=["difference", "ratio"],
                     choices=["difference", "ratio", "odds_ratio"])
    est.add_argument("--arms", nargs=2, metavar=("A", "A_REF"), help="default: last vs first level")
    est.add_argument("--treatment-prob", choices=["estimated", "known"], default="estimated")
    est.add_argument("--known-prob", nargs="+", metavar="LEVEL=P", help="per-arm probabilities for --treatment-prob known")
    est.add_argument("--family", choices=["auto", "gaussian", "binomial"], default="auto")
    est.add_argument("--truncate", type=float, help="lower bound applied to the combined weight w_a")
    est.add_argument("--normalized-ipw", action="store_true", help="divide IPW by the weight sum instead of N")
    est.add_argument("--bootstrap", type=int, default=1000, help="replicates (0 disables intervals)")
    est.add_argument("--ci-level", type=float, default=0.95)
    est.add_argument("--failure-policy", choices=["skip_and_count", "abort"], default="skip_and_count")
    est.add_argument("--seed", type=int, default=DEFAULT_SEED)
    est.add_argument("--jobs", type=int, default=1)
    est.add_argument("--output", "-o", type=Path, help="JSON report path")
    est.add_argument("--table", type=Path, help="text table path (default: stdout)")
    est.set_defaults(func=cmd_estimate)
    parser.estimate_parser = est

    sim = sub.add_parser("simulate", help="run a scenario grid and write a summary CSV")
    sim.add_argument("config", type=Path, help="YAML/JSON scenario grid")
    sim.add_argument("--output", "-o", type=Path, required=True)
    sim.add_argument("--seed", type=int, default=DEFAULT_SEED, help="master seed")
    sim.add_argument("--replicates", type=int, help="override every scenario's replicate count")
    sim.add_argument("--jobs", type=int, default=1)
    sim.set_defaults(func=cmd_simulate)

    cal = sub.add_parser("calibrate", help="solve for simulation design constants")
    cal.add_argument("kind", choices=["intercept", "tau_binary"])
    cal.add_argument("--theta-rest", nargs=3, type=float, default=[1.0, 1.0, 1.0])
    cal.add_argument("--fraction", type=float, help="target trial fraction n/N")
    cal.add_argument("--N", type=int, dest="n_total")
    cal.add_argument("--target-n", type=float)
    cal.add_argument("--odds-ratio", type=float)
    cal.add_argument("--psi", type=float, default=0.0)
    cal.add_argument("--zeta", nargs=4, type=float, default=[0.0, 1.0, 1.0, 1.0])
    cal.set_defaults(func=cmd_calibrate)

    ver = sub.add_parser("verify", help="compare saturated-model estimates with brute-force enumeration")
    _add_columns(ver)
    ver.add_argument("--output", "-o", type=Path, help="JSON report path")
    ver.set_defaults(func=cmd_verify)
    return parser


def _parse(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse ``argv``; for ``estimate --config FILE`` the YAML keys become
    defaults that explicit flags still override."""
    if "estimate" in argv:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config", type=Path)
        ns, _ = pre.parse_known_args(argv[argv.index("estimate") + 1:])
        if ns.config is not None:
            with open(ns.config, encoding="utf-8") as fh:
                cfg = yaml.safe_load(fh) or {}
            if not isinstance(cfg, dict):
                raise ValueError(f"{ns.config}: expected a mapping of option names")
            cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
            est = parser.estimate_parser
            dests = {a.dest for a in est._actions}  # noqa: SLF001
            unknown = sorted(set(cfg) - dests)
            if unknown:
                raise ValueError(f"unknown config key(s): {unknown}")
            for key in ("covariates", "participation_covariates", "outcome_covariates",
                        "treatment_covariates", "estimators", "contrasts", "known_prob"):
                if isinstance(cfg.get(key), str):
                    cfg[key] = [cfg[key]]
            for key in ("input", "output", "table"):
                if key in cfg and cfg[key] is not None:
                    cfg[key] = Path(cfg[key])
            est.set_defaults(**cfg)
            for action in est._actions:  # noqa: SLF001
                if action.dest in cfg:
                    action.required = False
    return parser.parse_args(argv)


def _level(text: str, levels: tuple):
    for lvl in levels:
        if str(lvl) == str(text):
            return lvl
    raise KeyError(f"unknown treatment level {text!r}; levels are {list(levels)}")


def _fmt(v: float | None, digits: int = 3) -> str:
    if v is None or not math.isfinite(v):
        return "-"
    return f"{v:.{digits}f}"


def render_table(result, arms, contrasts, reports) -> str:
    a, b = arms
    head = ["Estimator", f"Risk/mean A={a}", f"Risk/mean A={b}"]
    names = {"difference": "Difference", "ratio": "Ratio", "odds_ratio": "Odds ratio"}
    head += [f"{names[k]} (CI)" for k in contrasts]
    lines = []
    for est, pm in result.estimates.items():
        row = [TABLE_LABELS[est], _fmt(pm.per_arm[a]), _fmt(pm.per_arm[b])]
        for kind in contrasts:
            rep = reports.get((est, kind))
            if rep is None:
                try:
                    pt = contrast_value(pm.per_arm[a], pm.per_arm[b], kind)
                except EstimationError:
                    row.append("-")
                    continue
                row.append(_fmt(pt))
            elif rep.ci_low is None:
                row.append(_fmt(rep.point))
            else:
                row.append(f"{_fmt(rep.point)} ({_fmt(rep.ci_low)}, {_fmt(rep.ci_high)})")
        lines.append(row)
    widths = [max(len(r[j]) for r in [head, *lines]) for j in range(len(head))]
    out = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    out.append("  ".join("-" * w for w in widths))
    out += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in lines]
    return "\n".join(out) + "\n"


def cmd_estimate(args) -> int:
    data = read_csv(
        args.input,
        participation=args.participation,
        treatment=args.treatment,
        outcome=args.outcome,
        covariates=args.covariates,
    )
    if data.dropped_incomplete:
        log.warning("dropped %d row(s) with missing covariates", data.dropped_incomplete)
    levels = data.treatment_levels
    known = None
    if args.known_prob:
        known = {}
        for item in args.known_prob:
            lvl, _, p = str(item).partition("=")
            known[_level(lvl, levels)] = float(p)
    analysis = Analysis(
        participation_covariates=args.participation_covariates or args.covariates,
        outcome_covariates=args.outcome_covariates or args.covariates,
        treatment_prob_mode=args.treatment_prob,
        treatment_covariates=args.treatment_covariates or (),
        known_probabilities=known,
        family=args.family,
        truncation=args.truncate,
        normalized_ipw=args.normalized_ipw,
        estimators=args.estimators,
    )
    arms = (_level(args.arms[0], levels), _level(args.arms[1], levels)) if args.arms else (levels[-1], levels[0])
    contrasts = list(args.contrasts)

    if args.bootstrap:
        cfg = BootstrapConfig(args.bootstrap, args.seed, args.ci_level, args.failure_policy, args.jobs)
        boot = bootstrap_ci(data, analysis, cfg, arms=arms, contrasts=tuple(contrasts))
        result, reports, skipped = boot.point, boot.reports, boot.skipped
    else:
        result, reports, skipped = estimate(data, analysis), {}, 0

    report = {
        "input": str(args.input),
        "arms": [str(arms[0]), str(arms[1])],
        "family": result.nuisance.family.value,
        "treatment_prob_mode": analysis.treatment_prob_mode,
        "normalized_ipw": analysis.normalized_ipw,
        "bootstrap": {
            "replicates": args.bootstrap,
            "seed": args.seed,
            "ci_level": args.ci_level,
            "skipped": skipped,
        },
        "diagnostics": result.diagnostics.as_dict(),
        "estimates": {},
    }
    for est, pm in result.estimates.items():
        entry = {"per_arm": {str(k): v for k, v in pm.per_arm.items()}, "n_used": pm.n_used, "contrasts": {}}
        for kind in contrasts:
            rep = reports.get((est, kind))
            if rep is not None:
                entry["contrasts"][kind] = {"point": rep.point, "ci_low": rep.ci_low, "ci_high": rep.ci_high}
            else:
                try:
                    entry["contrasts"][kind] = {
                        "point": contrast_value(pm.per_arm[arms[0]], pm.per_arm[arms[1]], kind),
                        "ci_low": None,
                        "ci_high": None,
                    }
                except EstimationError:
                    pass
        report["estimates"][est.value] = entry

    if args.output:
        args.output.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    table = render_table(result, arms, contrasts, reports)
    if args.table:
        args.table.write_text(table, encoding="utf-8")
    else:
        sys.stdout.write(table)
    return EXIT_OK


def cmd_simulate(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        cfg = yaml.safe_load(fh) or {}
    if args.replicates:
        cfg.setdefault("defaults", {})["replicates"] = args.replicates
    grid = expand_grid(cfg)
    rows = run_factorial(grid, master_seed=cfg.get("seed", args.seed), n_jobs=args.jobs)
    write_summary_csv(rows, args.output)
    failed = [r for r in rows if r.summary is None]
    for r in failed:
        print(f"scenario {r.index + 1} failed: {r.error}", file=sys.stderr)
    print(f"wrote {len(rows) - len(failed)} scenario summaries to {args.output}")
    return EXIT_NUMERIC if len(failed) == len(rows) else EXIT_OK


def cmd_calibrate(args) -> int:
    if args.kind == "intercept":
        if args.fraction is not None:
            n_total, target = 1.0, args.fraction
        elif args.n_total and args.target_n:
            n_total, target = args.n_total, args.target_n
        else:
            raise ValueError("intercept calibration needs --fraction or both --N and --target-n")
        value = calibrate_intercept(args.theta_rest, n_total, target)
        achieved = expected_expit(value, float(np.linalg.norm(args.theta_rest)))
        residual = achieved - target / n_total
        print(f"theta0 = {value:.10f}")
        print(f"expected participation fraction = {achieved:.10f} (residual {residual:.2e})")
    else:
        if args.odds_ratio is None:
            raise ValueError("tau_binary calibration needs --odds-ratio")
        value = calibrate_tau_binary(args.odds_ratio, args.psi, args.zeta)
        residual = marginal_log_or(value, args.psi, args.zeta) - math.log(args.odds_ratio)
        print(f"tau = {value:.10f}")
        print(f"marginal odds ratio = {math.exp(marginal_log_or(value, args.psi, args.zeta)):.10f} "
              f"(log-OR residual {residual:.2e})")
    return EXIT_OK


def cmd_verify(args) -> int:
    data = read_csv(
        args.input,
        participation=args.participation,
        treatment=args.treatment,
        outcome=args.outcome,
        covariates=args.covariates,
    )
    spec = spec_from_dataset(data)
    sat, names = to_dataset(spec)
    analysis = Analysis(names, names, treatment_covariates=names, family="gaussian",
                        estimators=POPULATION_ESTIMATORS)
    res = estimate(sat, analysis, warn=False)
    report = {"cells": len(spec.cells), "arms": {}}
    worst = 0.0
    print(f"{len(spec.cells)} covariate pattern(s), N = {spec.n_total}")
    for lvl in spec.arms:
        truth = plugin_estimand(spec, lvl)
        row = {"oracle": truth}
        line = [f"A={lvl}: oracle {truth:.10f}"]
        for est in POPULATION_ESTIMATORS:
            v = res.estimates[est].per_arm[lvl]
            row[est.value] = v
            worst = max(worst, abs(v - truth))
            line.append(f"{TABLE_LABELS[est]} {v:.10f}")
        report["arms"][str(lvl)] = row
        print("  ".join(line))
    report["max_abs_difference"] = worst
    print(f"max |estimate - oracle| = {worst:.2e}")
    if args.output:
        args.output.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(parser, argv)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
