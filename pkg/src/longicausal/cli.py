"""Command-line interface: simulate, truth, estimate, diagnose, natural-course, benchmark.

Every command that writes output also writes ``<output>.manifest.json`` with
the full argument set, seed and package version.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, scm
from . import benchmark as bm
from . import diagnostics as dg
from .estimators import (
    EstimationError,
    GFormulaConfig,
    LtmleConfig,
    gformula_estimate,
    ltmle_estimate,
    natural_course,
    seq_gformula_estimate,
)
from .longdata import OutcomeScale, load_rule, read_csv, validate, write_csv

log = logging.getLogger("longicausal")

THREADS_ENV = "LONGICAUSAL_THREADS"


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------- helpers

def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x)


def _names(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _yrange(text: str | None) -> OutcomeScale | None:
    if text is None:
        return None
    lo, hi = _floats(text)
    return OutcomeScale(lo, hi)


def threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def write_manifest(output, args, **extra) -> Path:
    output = Path(output)
    path = output.parent / f"{output.name}.manifest.json"
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    doc = {"command": args.command, "version": __version__, "seed": getattr(args, "seed", None),
           "config": cfg, **extra}
    path.write_text(json.dumps(doc, indent=2, default=str) + "\n")
    return path


def _load(path) -> "object":
    data = read_csv(path)
    if data.n == 0:
        raise CliError(f"{path}: dataset has no rows")
    problems = validate(data)
    if problems:
        head = "; ".join(f"subject {v.subject} {v.node}: {v.message}" for v in problems[:5])
        raise CliError(f"{path}: {len(problems)} validation problem(s): {head}")
    return data


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    model = scm.build_study_dgp(T=args.horizon)
    if args.mode == "observational":
        mode = scm.Observational()
    elif args.mode == "intervened":
        if not args.rule:
            raise CliError("--mode intervened needs --rule")
        mode = scm.Intervened(load_rule(args.rule))
    else:
        mode = scm.NaturalTreatmentNoCensoring()
    data = scm.simulate(model, scm.SimulationConfig(n=args.n, T=args.horizon, seed=args.seed, mode=mode))
    out = Path(args.out)
    try:
        write_csv(data, out)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}") from exc
    write_manifest(out, args)
    means = {}
    for name in data.schema.names:
        col = data.column(name)
        if data.schema.node(name).time in (0, args.horizon) and not np.isnan(col).all():
            means[name] = float(np.nanmean(col))
    print(f"wrote {data.n} rows x {len(data.schema)} columns to {out}")
    for name, m in means.items():
        print(f"  mean {name:6s} {m:10.4f}")
    return 0


def cmd_truth(args) -> int:
    rule = load_rule(args.rule)
    est = scm.true_psi(scm.build_study_dgp(T=args.horizon), rule, args.horizon, n_mc=args.n_mc, seed=args.seed)
    print(f"psi({rule.name}, {args.horizon}) = {est.value:.4f} +- {est.mc_se:.4f} (MC SE, n_mc={est.n_mc})")
    if args.out:
        Path(args.out).write_text(json.dumps({"rule": rule.name, "t": args.horizon, "psi": est.value,
                                              "mc_se": est.mc_se, "n_mc": est.n_mc}, indent=2) + "\n")
        write_manifest(args.out, args)
    return 0


def cmd_estimate(args) -> int:
    data = _load(args.data)
    rule = load_rule(args.rule)
    if args.method == "gformula":
        cfg = GFormulaConfig(model=args.model, n_sim=args.n_sim, seed=args.seed)
        res = gformula_estimate(data, rule, args.horizon, cfg, bootstrap=args.bootstrap, bootstrap_seed=args.seed)
    else:
        cfg = LtmleConfig(learners=args.learners, folds=args.folds, g_bound=args.gbound, seed=args.seed,
                          outcome_scale=_yrange(args.yrange), target=not args.no_target)
        if args.method == "seqg":
            res = seq_gformula_estimate(data, rule, args.horizon, cfg, bootstrap=args.bootstrap,
                                        bootstrap_seed=args.seed)
        else:
            res = ltmle_estimate(data, rule, args.horizon, cfg)
    out = Path(args.out)
    res.to_json(out)
    res.write_per_time_csv(out.with_suffix(".per_time.csv"))
    write_manifest(out, args)
    ci = "n/a" if res.ci is None else f"({res.ci[0]:.4f}, {res.ci[1]:.4f})"
    print(f"{res.method} {res.rule} t={res.t}: psi = {res.psi:.4f}, 95% CI {ci}")
    return 0


def cmd_diagnose(args) -> int:
    data = _load(args.data)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rules = [load_rule(r) for r in args.rule]
    cfg = LtmleConfig(learners=args.learners, folds=args.folds, g_bound=args.gbound[0], seed=args.seed,
                      outcome_scale=_yrange(args.yrange))
    failures = 0
    estimates, truncation, support = [], {}, []
    for rule in rules:
        rows = dg.truncation_sensitivity(data, rule, args.horizon, cfg, args.gbound)
        truncation[rule.name] = rows
        failures += sum(r.error is not None for r in rows)
        try:
            estimates.append((args.learners, ltmle_estimate(data, rule, args.horizon, cfg)))
        except EstimationError as exc:
            log.error("%s: %s", rule.name, exc)
            failures += 1
        support.append(dg.estimate_data_support(data, rule, args.horizon, args.threshold, seed=args.seed))
    dg.write_estimate_table(estimates, out / "clever_covariate.csv")
    dg.write_truncation_table(truncation, out / "truncation.csv")
    dg.write_support_table(support, out / "data_support.csv")
    dg.write_bundle(out / "diagnostics.json", estimates=[r for _, r in estimates], truncation=truncation, support=support)
    write_manifest(out / "diagnostics.json", args)
    for est in support:
        prop = "n/a" if est.proportion is None else f"{100 * est.proportion:.2f}%"
        print(f"{est.rule}: data support {prop} below {est.threshold} (n={est.denominator}, {est.convention})")
    return 1 if failures else 0


def cmd_natural_course(args) -> int:
    data = _load(args.data)
    table = natural_course(data, args.horizon, GFormulaConfig(model=args.model, n_sim=args.n_sim, seed=args.seed),
                           bootstrap=args.bootstrap, bootstrap_seed=args.seed)
    table.to_csv(args.out)
    write_manifest(args.out, args)
    for r in table.rows:
        if r["var"] == "Y":
            print(f"t={r['t']:2d}  observed {r['observed']:+.3f}  simulated {r['simulated']:+.3f}  "
                  f"difference {r['difference']:+.3f}")
    return 0


def cmd_benchmark(args) -> int:
    grid = bm.BenchmarkGrid(n_values=args.n, g_values=args.gbound, learner_sets=args.learners, rules=args.rule,
                            horizons=args.horizon, reps=args.reps, seed=args.seed, folds=args.folds)
    truth = None
    if args.truth_n_mc:
        truth = bm.truth_table(grid, n_mc=args.truth_n_mc)
    missing = [(r, t) for r in grid.rules for t in grid.horizons if (r, t) not in (truth or bm.REFERENCE_TRUTH)]
    if missing:
        raise CliError(f"no reference truth for {missing}; pass --truth-n-mc")
    cells, records = bm.run_benchmark(grid, truth, threads=threads(args))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bm.write_cells(cells, out / "cells.csv")
    bm.write_records(records, out / "records.json")
    summary = bm.summarize(cells, records, g_pair=tuple(grid.g_values[:2]) if len(grid.g_values) > 1 else (0, 0))
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=str) + "\n")
    write_manifest(out / "cells.csv", args, threads=threads(args))
    failed = sum(c.failures for c in cells)
    aborted = sum(c.aborted for c in cells)
    print(f"{len(cells)} cells, {failed} failed replicates, {aborted} aborted cells -> {out}")
    return 1 if failed or aborted else 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="longicausal", description="Longitudinal causal effect estimation.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate the study DGP to CSV")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--horizon", type=int, default=12)
    s.add_argument("--mode", choices=["observational", "intervened", "natural"], default="observational")
    s.add_argument("--rule", help="rule for --mode intervened (d1..d4 or JSON file)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("truth", help="Monte Carlo truth of psi under a rule")
    s.add_argument("--rule", required=True)
    s.add_argument("--horizon", type=int, default=12)
    s.add_argument("--n-mc", type=int, default=1_000_000)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_truth)

    s = sub.add_parser("estimate", help="estimate psi from a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--method", choices=["gformula", "seqg", "ltmle"], default="ltmle")
    s.add_argument("--rule", required=True)
    s.add_argument("--horizon", type=int, default=12)
    s.add_argument("--gbound", type=float, default=0.01)
    s.add_argument("--learners", default="set2", help="set1|set2|set3 or a single learner name")
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--yrange", help="outcome range lo,hi (write --yrange=-15,15 for negative bounds)")
    s.add_argument("--no-target", action="store_true", help="skip the targeting step")
    s.add_argument("--bootstrap", type=int, default=0, help="bootstrap replicates (gformula, seqg)")
    s.add_argument("--model", default="glm", help="single learner for the g-formula")
    s.add_argument("--n-sim", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("diagnose", help="clever covariate, truncation and data-support tables")
    s.add_argument("--data", required=True)
    s.add_argument("--rule", type=_names, required=True, help="comma-separated rules")
    s.add_argument("--horizon", type=int, default=12)
    s.add_argument("--gbound", type=_floats, default=(0.01, 0.025, 0.04))
    s.add_argument("--learners", default="set2")
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--yrange")
    s.add_argument("--threshold", type=float, default=0.025)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("natural-course", help="observed vs g-formula natural-course means per time")
    s.add_argument("--data", required=True)
    s.add_argument("--horizon", type=int, default=12)
    s.add_argument("--model", default="glm")
    s.add_argument("--n-sim", type=int, default=10_000)
    s.add_argument("--bootstrap", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_natural_course)

    s = sub.add_parser("benchmark", help="bias and coverage grid on the study DGP")
    s.add_argument("--n", type=_ints, default=(200, 600, 1000))
    s.add_argument("--gbound", type=_floats, default=(0.01, 0.025, 0.04))
    s.add_argument("--learners", type=_names, default=("set1", "set2", "set3"))
    s.add_argument("--rule", type=_names, default=("d1", "d2", "d3", "d4"))
    s.add_argument("--horizon", type=_ints, default=(6, 12))
    s.add_argument("--reps", type=int, default=250)
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=None, help=f"parallel workers (env {THREADS_ENV})")
    s.add_argument("--truth-n-mc", type=int, default=0, help="recompute truths by simulation (0: reference values)")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, EstimationError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
