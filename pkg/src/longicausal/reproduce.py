"""Reproduction runs for the simulation study, cached as JSON.

Each run is keyed by a hash of its configuration and the package version.
A matching cache file is reused, so the acceptance suite and the scripts
share work.  The reduced benchmark saves its replicate records after every
batch and resumes from them.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__, scm
from . import benchmark as bm
from .longdata import study_rules, rule_adherence_mask

log = logging.getLogger(__name__)

DEFAULT_CACHE = Path(__file__).resolve().parents[2] / "results"

# reference values for the simulation study
PSI_TARGETS = bm.REFERENCE_TRUTH
BASELINE_TARGETS = {
    "V1": (0.755, 0.003), "V2": (0.512, 0.003), "V3": (3.0, 0.01), "L1.0": (672.5, 2.0),
    "L2.0": (0.155, 0.001), "L3.0": (-1.5, 0.01), "Y.0": (-2.5, 0.01),
}
T12_TARGETS = {"L1.12": (1092.0, 5.0), "L2.12": (0.272, 0.003), "L3.12": (-0.8, 0.03), "Y.12": (-1.5, 0.03)}
USABLE_N_TARGETS = {200: {"d4": 39, "d2": 79}, 600: {"d4": 116, "d2": 238}, 1000: {"d4": 190, "d2": 396}}
SUPPORT_TARGETS = {"d1": 0.003, "d2": 0.010, "d3": 0.006, "d4": 0.015}


def _key(name: str, config: dict) -> str:
    blob = json.dumps({"name": name, "version": __version__, **config}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def cached(name: str, config: dict, compute, cache_dir=None, refresh: bool = False) -> dict:
    """Return ``compute()`` (a JSON-able dict), reusing ``<cache_dir>/<name>-<key>.json``."""
    cache_dir = Path(cache_dir or DEFAULT_CACHE)
    path = cache_dir / f"{name}-{_key(name, config)}.json"
    if path.exists() and not refresh:
        return json.loads(path.read_text())["result"]
    t0 = time.time()
    result = compute()
    cache_dir.mkdir(parents=True, exist_ok=True)
    doc = {"name": name, "config": config, "version": __version__, "seconds": round(time.time() - t0, 1),
           "result": result}
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return result


# ---------------------------------------------------------------- runs

def truth_run(n_mc: int = 2_000_000, seed: int = 1, cache_dir=None, refresh=False) -> dict:
    config = {"n_mc": n_mc, "seed": seed, "horizons": [6, 12]}

    def compute():
        model = scm.build_study_dgp()
        out = {}
        for name, rule in study_rules().items():
            for t in (6, 12):
                est = scm.true_psi(model, rule, t, n_mc=n_mc, seed=seed)
                out[f"{name},{t}"] = {"psi": est.value, "mc_se": est.mc_se}
        return out

    return cached("truth", config, compute, cache_dir, refresh)


def moments_run(n: int = 1_000_000, seed: int = 3, cache_dir=None, refresh=False) -> dict:
    config = {"n": n, "seed": seed}

    def compute():
        means = scm.column_means(scm.build_study_dgp(), scm.SimulationConfig(n=n, seed=seed))
        return {k: means[k] for k in (*BASELINE_TARGETS, *T12_TARGETS)}

    return cached("moments", config, compute, cache_dir, refresh)


def usable_n_run(reps: int = 200, seed: int = 4, cache_dir=None, refresh=False) -> dict:
    """Mean count adherent and uncensored through t=12, per (n, rule)."""
    config = {"reps": reps, "seed": seed, "n": sorted(USABLE_N_TARGETS)}

    def compute():
        model = scm.build_study_dgp()
        rules = study_rules()
        out = {}
        for n in USABLE_N_TARGETS:
            counts = {r: [] for r in rules}
            for rep in range(reps):
                data = scm.simulate(model, scm.SimulationConfig(n=n, seed=bm.derive_seed(seed, n, rep)))
                for name, rule in rules.items():
                    counts[name].append(int(rule_adherence_mask(data, rule)[:, -1].sum()))
            out[str(n)] = {r: float(np.mean(v)) for r, v in counts.items()}
        return out

    return cached("usable_n", config, compute, cache_dir, refresh)


def support_run(n_mc: int = 100_000, threshold: float = 0.025, seed: int = 2, cache_dir=None, refresh=False) -> dict:
    config = {"n_mc": n_mc, "threshold": threshold, "seed": seed}

    def compute():
        model = scm.build_study_dgp()
        out = {}
        for population in scm.SUPPORT_POPULATIONS:
            out[population] = {
                name: scm.data_support(model, rule, threshold, n_mc=n_mc, seed=seed, population=population)
                for name, rule in study_rules().items()
            }
        return out

    return cached("support", config, compute, cache_dir, refresh)


ACCEPTANCE_GRID = bm.BenchmarkGrid(
    n_values=(1000,), g_values=(0.01, 0.04), learner_sets=("set2",), rules=("d1", "d2", "d3", "d4"),
    horizons=(12,), reps=250, seed=2024, folds=10,
)


@dataclass
class BenchmarkRun:
    cells: list
    records: list
    summary: dict
    complete: bool


def benchmark_run(grid: bm.BenchmarkGrid = ACCEPTANCE_GRID, threads: int = 1, batch: int = 10,
                  cache_dir=None, max_seconds: float | None = None) -> BenchmarkRun:
    """Run (or resume) ``grid``; records are saved after every batch of replicates."""
    cache_dir = Path(cache_dir or DEFAULT_CACHE)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"benchmark-{_key('benchmark', grid.to_dict())}.records.json"
    records = bm.read_records(path) if path.exists() else []
    t0 = time.time()
    done_reps = len({(r.n, r.rep) for r in records}) // len(grid.n_values)
    while done_reps < grid.reps:
        if max_seconds is not None and time.time() - t0 > max_seconds:
            break
        upto = min(grid.reps, done_reps + batch)
        _, records = bm.run_benchmark(replace(grid, reps=upto), threads=threads, done=records)
        bm.write_records(records, path)
        done_reps = upto
        log.info("benchmark: %d/%d replicates", done_reps, grid.reps)
    cells = bm.aggregate(records, bm.REFERENCE_TRUTH) if records else []
    summary = bm.summarize(cells, records, g_pair=tuple(grid.g_values[:2]) if len(grid.g_values) > 1 else (0, 0))
    complete = done_reps >= grid.reps
    bm.write_cells(cells, path.with_suffix("").with_suffix(".cells.csv"))
    (path.with_suffix("").with_suffix(".summary.json")).write_text(
        json.dumps({"grid": grid.to_dict(), "complete": complete, **summary}, indent=2, default=str) + "\n")
    return BenchmarkRun(cells, records, summary, complete)
