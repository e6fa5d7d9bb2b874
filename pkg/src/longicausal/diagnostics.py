"""Positivity and specification diagnostics.

Clever-covariate summaries, truncation sensitivity, estimated data support
for a rule, and CSV/JSON emitters shaped like the usual reporting tables.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .estimators.common import EstimationError, _jsonable
from .estimators.gformula import NaturalCourseTable, natural_course
from .estimators.ltmle import (
    CleverCovariateTrace,
    LtmleConfig,
    clever_covariate,
    fit_g_models,
    ltmle_estimate,
)
from .longdata import InterventionRule, LongitudinalDataset

log = logging.getLogger(__name__)

SUPPORT_CONVENTION = "adherent and uncensored through T"

__all__ = [
    "CcSummary",
    "NaturalCourseTable",
    "SupportEstimate",
    "TruncationRow",
    "cc_summary",
    "estimate_data_support",
    "natural_course",
    "truncation_sensitivity",
    "write_bundle",
    "write_estimate_table",
    "write_truncation_table",
    "write_support_table",
]


@dataclass
class CcSummary:
    t: int
    mean_cc: float | None
    pct_truncated: float | None
    usable_n: int


def cc_summary(trace: CleverCovariateTrace, t: int) -> CcSummary:
    """Mean H, truncated share and count over rows with a positive numerator at ``t``."""
    if t not in trace.times:
        raise KeyError(f"time {t} not in trace (has {trace.times})")
    k = trace.times.index(t)
    used = trace.numerator[:, k]
    if not used.any():
        return CcSummary(t, None, None, 0)
    return CcSummary(
        t,
        float(trace.H[used, k].mean()),
        float(trace.truncated[used, k].mean()),
        int(used.sum()),
    )


@dataclass
class TruncationRow:
    g: float
    psi: float | None
    ci_low: float | None
    ci_high: float | None
    mean_cc: float | None
    pct_truncated: float | None
    usable_n: int | None
    error: str | None = None


def truncation_sensitivity(
    dataset: LongitudinalDataset,
    rule: InterventionRule,
    T: int,
    config: LtmleConfig = LtmleConfig(),
    g_values: Sequence[float] = (0.01, 0.025, 0.04),
) -> list[TruncationRow]:
    """LTMLE per truncation level with one shared set of fitted g-models."""
    for g in g_values:
        if not 0 < g < 0.5 + 1e-12:
            raise ValueError(f"g must lie in (0, 0.5], got {g}")
    bank = fit_g_models(dataset, config, T)
    rows = []
    for g in g_values:
        try:
            res = ltmle_estimate(dataset, rule, T, replace(config, g_bound=g), bank=bank)
        except (EstimationError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("truncation level %g failed: %s", g, exc)
            rows.append(TruncationRow(g, None, None, None, None, None, None, str(exc)))
            continue
        d = res.diagnostics
        rows.append(TruncationRow(g, res.psi, res.ci[0], res.ci[1], d["mean_cc"], d["pct_truncated"], d["usable_n"]))
    return rows


@dataclass
class SupportEstimate:
    rule: str
    threshold: float
    proportion: float | None
    denominator: int
    convention: str = SUPPORT_CONVENTION


def estimate_data_support(
    dataset: LongitudinalDataset,
    rule: InterventionRule,
    T: int,
    threshold: float = 0.025,
    learners="glm",
    seed: int = 0,
) -> SupportEstimate:
    """Share of estimated cumulative probabilities of following ``rule`` below ``threshold``.

    Treatment models are main-terms logistic regressions by default.  The
    product runs over treatment factors only and is reported among subjects
    adherent and uncensored through ``T``.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    config = LtmleConfig(learners=learners, seed=seed)
    bank = fit_g_models(dataset, config, T)
    blocks = [b for b in bank.blocks if b.time <= T]
    trace = clever_covariate(dataset, rule, bank, g_bound=1e-12, blocks=blocks)
    cum = np.cumprod(np.nan_to_num(trace.p_treat, nan=1.0), axis=1)[:, -1]
    used = trace.numerator[:, -1]
    denom = int(used.sum())
    prop = float(np.mean(cum[used] < threshold)) if denom else None
    return SupportEstimate(rule.name or "custom", threshold, prop, denom)


# ---------------------------------------------------------------- emitters

def _write_rows(path, fields: list[str], rows: Iterable[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({f: "" if r.get(f) is None else r.get(f) for f in fields})


def write_estimate_table(results, path) -> None:
    """Mean clever covariate and % truncated per (rule, learner set, t).

    ``results`` yields ``(learners, EstimateResult)`` pairs.
    """
    rows = []
    for learners, res in results:
        for r in res.per_time:
            rows.append({"rule": res.rule, "learners": learners, **r})
    _write_rows(path, ["rule", "learners", "t", "mean_cc", "pct_truncated", "usable_n"], rows)


def write_truncation_table(rows_by_rule: dict[str, list[TruncationRow]], path) -> None:
    rows = [{"rule": rule, **asdict(r)} for rule, rs in rows_by_rule.items() for r in rs]
    _write_rows(path, ["rule", "g", "psi", "ci_low", "ci_high", "mean_cc", "pct_truncated", "usable_n", "error"], rows)


def write_support_table(estimates: Sequence[SupportEstimate], path) -> None:
    _write_rows(path, ["rule", "threshold", "proportion", "denominator", "convention"], [asdict(e) for e in estimates])


def write_bundle(path, **sections) -> None:
    """One JSON document holding any mix of dataclasses, results and plain values."""

    def conv(v):
        if hasattr(v, "to_dict"):
            return v.to_dict()
        if hasattr(v, "__dataclass_fields__"):
            return asdict(v)
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        return v

    Path(path).write_text(json.dumps(_jsonable(conv(sections)), indent=2) + "\n")
