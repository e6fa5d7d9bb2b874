"""Simulation benchmark: bias and coverage of LTMLE over a factorial grid.

One work unit is a (sample size, replicate) pair.  It simulates one
observational dataset, fits the g-models once per learner set, and runs
LTMLE for every rule, horizon and truncation level.  Seeds are derived from
(master seed, n, replicate), so results do not depend on how work units are
scheduled.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import scm
from .estimators.common import EstimationError, derive_seed
from .estimators.ltmle import LtmleConfig, fit_g_models, ltmle_estimate
from .longdata import study_rules

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.20

# Monte Carlo truths of the simulation DGP (rule, horizon)
REFERENCE_TRUTH = {
    ("d1", 6): -1.804, ("d2", 6): -1.850, ("d3", 6): -2.028, ("d4", 6): -2.452,
    ("d1", 12): -1.029, ("d2", 12): -1.119, ("d3", 12): -1.466, ("d4", 12): -2.447,
}


@dataclass(frozen=True)
class BenchmarkGrid:
    n_values: tuple[int, ...] = (200, 600, 1000)
    g_values: tuple[float, ...] = (0.01, 0.025, 0.04)
    learner_sets: tuple[str, ...] = ("set1", "set2", "set3")
    rules: tuple[str, ...] = ("d1", "d2", "d3", "d4")
    horizons: tuple[int, ...] = (6, 12)
    reps: int = 250
    seed: int = 0
    folds: int = 10

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not (self.n_values and self.g_values and self.learner_sets and self.rules and self.horizons):
            raise ValueError("every grid axis needs at least one value")

    @property
    def max_horizon(self) -> int:
        return max(self.horizons)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CellKey:
    n: int
    learners: str
    rule: str
    horizon: int
    g: float


@dataclass
class ReplicateRecord:
    n: int
    rep: int
    learners: str
    rule: str
    horizon: int
    g: float
    psi: float | None
    ci_low: float | None
    ci_high: float | None
    usable_n: int | None
    mean_cc: float | None
    pct_truncated: float | None
    error: str | None = None

    @property
    def key(self) -> CellKey:
        return CellKey(self.n, self.learners, self.rule, self.horizon, self.g)


@dataclass
class CellResult:
    key: CellKey
    truth: float
    replicates: int
    failures: int
    aborted: bool
    mean_psi: float | None = None
    bias: float | None = None
    sd: float | None = None
    coverage: float | None = None
    mean_usable_n: float | None = None
    mean_cc: float | None = None
    pct_truncated: float | None = None

    def row(self) -> dict:
        return {**asdict(self.key), **{k: v for k, v in asdict(self).items() if k != "key"}}


def truth_table(grid: BenchmarkGrid, n_mc: int = 1_000_000, seed: int = 1, model=None) -> dict[tuple[str, int], float]:
    """Monte Carlo truth per (rule, horizon), computed once for the whole grid."""
    model = model or scm.build_study_dgp(T=grid.max_horizon)
    rules = study_rules()
    return {
        (r, t): scm.true_psi(model, rules[r], t, n_mc=n_mc, seed=seed).value
        for r in grid.rules
        for t in grid.horizons
    }


# ---------------------------------------------------------------- work units

def ltmle_unit(grid: BenchmarkGrid, n: int, rep: int, model=None) -> list[ReplicateRecord]:
    """Every cell of one (n, replicate) pair."""
    model = model or scm.build_study_dgp(T=grid.max_horizon)
    seed = derive_seed(grid.seed, n, rep)
    data = scm.simulate(model, scm.SimulationConfig(n=n, T=grid.max_horizon, seed=seed))
    rules = study_rules()
    out = []
    for learners in grid.learner_sets:
        cfg = LtmleConfig(learners=learners, folds=grid.folds, seed=seed)
        try:
            bank = fit_g_models(data, cfg, grid.max_horizon)
        except (EstimationError, ValueError, np.linalg.LinAlgError) as exc:
            bank, bank_error = None, str(exc)
        for rule in grid.rules:
            for t in grid.horizons:
                for g in grid.g_values:
                    if bank is None:
                        out.append(_failed(n, rep, learners, rule, t, g, bank_error))
                        continue
                    out.append(_run_cell(data, rules[rule], t, replace(cfg, g_bound=g), bank, n, rep, learners, rule, g))
    return out


def _failed(n, rep, learners, rule, t, g, msg) -> ReplicateRecord:
    return ReplicateRecord(n, rep, learners, rule, t, g, None, None, None, None, None, None, msg)


def _run_cell(data, rule_obj, t, cfg, bank, n, rep, learners, rule, g) -> ReplicateRecord:
    try:
        res = ltmle_estimate(data, rule_obj, t, cfg, bank=bank)
    except (EstimationError, ValueError, np.linalg.LinAlgError) as exc:
        log.warning("cell n=%d rep=%d %s %s t=%d g=%g failed: %s", n, rep, learners, rule, t, g, exc)
        return _failed(n, rep, learners, rule, t, g, str(exc))
    d = res.diagnostics
    return ReplicateRecord(n, rep, learners, rule, t, g, res.psi, res.ci[0], res.ci[1],
                           d["usable_n"], d["mean_cc"], d["pct_truncated"])


def run_benchmark(
    grid: BenchmarkGrid,
    truth: dict[tuple[str, int], float] | None = None,
    threads: int = 1,
    unit: Callable[[BenchmarkGrid, int, int], list[ReplicateRecord]] = ltmle_unit,
    done: Sequence[ReplicateRecord] = (),
) -> tuple[list[CellResult], list[ReplicateRecord]]:
    """Run every (n, replicate) unit not already in ``done`` and aggregate per cell.

    ``truth`` defaults to the reference Monte Carlo targets.  ``unit`` must
    be a module-level function when ``threads`` > 1.
    """
    truth = dict(REFERENCE_TRUTH if truth is None else truth)
    finished = {(r.n, r.rep) for r in done}
    todo = [(n, rep) for n in grid.n_values for rep in range(grid.reps) if (n, rep) not in finished]
    records = list(done)
    if threads > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for recs in pool.map(unit, [grid] * len(todo), *zip(*todo)):
                records.extend(recs)
    else:
        for n, rep in todo:
            records.extend(unit(grid, n, rep))
    records.sort(key=lambda r: (r.n, r.learners, r.rule, r.horizon, r.g, r.rep))
    return aggregate(records, truth), records


def aggregate(records: Sequence[ReplicateRecord], truth: dict[tuple[str, int], float]) -> list[CellResult]:
    by_cell: dict[CellKey, list[ReplicateRecord]] = {}
    for r in records:
        by_cell.setdefault(r.key, []).append(r)
    cells = []
    for key, recs in by_cell.items():
        psi_true = truth[(key.rule, key.horizon)]
        ok = [r for r in recs if r.error is None]
        failures = len(recs) - len(ok)
        aborted = failures > MAX_FAILURE_RATE * len(recs) or not ok
        cell = CellResult(key, psi_true, len(recs), failures, aborted)
        if not aborted:
            psi = np.array([r.psi for r in ok])
            cell.mean_psi = float(psi.mean())
            cell.bias = cell.mean_psi - psi_true
            cell.sd = float(psi.std(ddof=1)) if len(psi) > 1 else 0.0
            cell.coverage = float(np.mean([r.ci_low <= psi_true <= r.ci_high for r in ok]))
            cell.mean_usable_n = float(np.mean([r.usable_n for r in ok]))
            cell.mean_cc = _nanmean([r.mean_cc for r in ok])
            cell.pct_truncated = _nanmean([r.pct_truncated for r in ok])
        else:
            log.error("cell %s aborted: %d of %d replicates failed", key, failures, len(recs))
        cells.append(cell)
    return cells


def _nanmean(xs) -> float | None:
    v = np.array([np.nan if x is None else x for x in xs], dtype=float)
    return float(np.nanmean(v)) if np.isfinite(v).any() else None


# ---------------------------------------------------------------- summary

def summarize(cells: Sequence[CellResult], records: Sequence[ReplicateRecord] = (),
              focus_n: int = 1000, focus_learners: str = "set2", focus_t: int = 12,
              g_pair: tuple[float, float] = (0.01, 0.04)) -> dict:
    """Per-rule |bias| ranking, coverage table and the qualitative pattern checks."""
    live = [c for c in cells if not c.aborted]
    ranking: dict[str, list[str]] = {}
    groups: dict[tuple, list[CellResult]] = {}
    for c in live:
        groups.setdefault((c.key.n, c.key.learners, c.key.horizon, c.key.g), []).append(c)
    for (n, learners, t, g), cs in sorted(groups.items()):
        ranked = sorted(cs, key=lambda c: -abs(c.bias))
        ranking[f"n={n} {learners} t={t} g={g}"] = [c.key.rule for c in ranked]
    coverage = [
        {**asdict(c.key), "bias": c.bias, "coverage": c.coverage} for c in live
    ]

    checks = {}
    focus = [c for c in live if c.key.n == focus_n and c.key.learners == focus_learners and c.key.horizon == focus_t]
    good = [c for c in focus if c.key.rule in ("d1", "d3")]
    if good:
        checks["accurate_d1_d3"] = {
            "pass": all(abs(c.bias) < 0.1 and c.coverage >= 0.80 for c in good),
            "cells": [{**asdict(c.key), "bias": c.bias, "coverage": c.coverage} for c in good],
        }
    pattern = []
    for (n, learners, t, g), cs in sorted(groups.items()):
        b = {c.key.rule: abs(c.bias) for c in cs}
        if t == focus_t and {"d1", "d2", "d3", "d4"} <= set(b):
            pattern.append({"n": n, "learners": learners, "g": g,
                            "pass": min(b["d2"], b["d4"]) > max(b["d1"], b["d3"])})
    if pattern:
        checks["hardest_rules_d2_d4"] = {"pass": all(p["pass"] for p in pattern), "cells": pattern}
    trunc = truncation_differences(records, g_pair)
    if trunc:
        checks["truncation_insensitive"] = {"pass": all(abs(v) < 0.05 for v in trunc.values()),
                                            "mean_difference": {str(k): v for k, v in trunc.items()}}
    return {"ranking": ranking, "coverage": coverage, "checks": checks}


def truncation_differences(records: Sequence[ReplicateRecord], g_pair=(0.01, 0.04)) -> dict:
    """Mean paired psi difference between two truncation levels, per (n, learners, rule, t)."""
    g1, g2 = g_pair
    psi = {(r.n, r.learners, r.rule, r.horizon, r.g, r.rep): r.psi for r in records if r.error is None}
    diffs: dict[tuple, list[float]] = {}
    for (n, learners, rule, t, g, rep), v in psi.items():
        if g == g1 and (n, learners, rule, t, g2, rep) in psi:
            diffs.setdefault((n, learners, rule, t), []).append(v - psi[(n, learners, rule, t, g2, rep)])
    return {k: float(np.mean(v)) for k, v in diffs.items()}


# ---------------------------------------------------------------- files

CELL_COLUMNS = ["n", "learners", "rule", "horizon", "g", "truth", "replicates", "failures", "aborted",
                "mean_psi", "bias", "sd", "coverage", "mean_usable_n", "mean_cc", "pct_truncated"]


def write_cells(cells: Sequence[CellResult], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CELL_COLUMNS)
        w.writeheader()
        for c in sorted(cells, key=lambda c: (c.key.n, c.key.learners, c.key.rule, c.key.horizon, c.key.g)):
            w.writerow({k: "" if v is None else v for k, v in c.row().items()})


def write_records(records: Sequence[ReplicateRecord], path) -> None:
    rows = [asdict(r) for r in records]
    Path(path).write_text(json.dumps(rows, allow_nan=False, default=_nan_to_none) + "\n")


def read_records(path) -> list[ReplicateRecord]:
    return [ReplicateRecord(**r) for r in json.loads(Path(path).read_text())]


def _nan_to_none(x):
    if isinstance(x, float) and math.isnan(x):
        return None
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(type(x))
