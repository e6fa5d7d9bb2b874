"""Shared plumbing: intervention blocks, history windows, model fitting, results."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import learners as lrn
from ..longdata import (
    EVENT_ROLES,
    INTERVENTION_ROLES,
    InterventionRule,
    LongitudinalDataset,
    NodeSchema,
    Role,
    evaluate_rule,
    node_name,
)

log = logging.getLogger(__name__)

Z95 = 1.959964


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class HistoryConfig:
    """Regressors are nodes at times ``t - lag`` for each lag, plus baseline."""

    lags: tuple[int, ...] = (0, 1)
    baseline: bool = True


@dataclass(frozen=True)
class Block:
    """Intervention nodes sharing one time index (treatment, then events)."""

    time: int
    treatment: int | None
    events: tuple[int, ...]

    @property
    def first(self) -> int:
        return min(p for p in (self.treatment, *self.events) if p is not None)

    @property
    def last(self) -> int:
        return max(p for p in (self.treatment, *self.events) if p is not None)


def outcome_position(schema: NodeSchema, var: str, T: int) -> int:
    node = schema.find(var, T)
    if node is None:
        raise EstimationError(f"no outcome node {node_name(var, T)} in data")
    return schema.position(node.name)


def blocks_before(schema: NodeSchema, position: int) -> list[Block]:
    """Intervention blocks whose nodes all precede ``position``."""
    by_time: dict[int, list[int]] = {}
    for pos, node in enumerate(schema.nodes[:position]):
        if node.role in INTERVENTION_ROLES:
            by_time.setdefault(node.time, []).append(pos)
    out = []
    for t, positions in sorted(by_time.items()):
        treat = [p for p in positions if schema.nodes[p].role is Role.TREATMENT]
        events = tuple(p for p in positions if schema.nodes[p].role in EVENT_ROLES)
        out.append(Block(t, treat[0] if treat else None, events))
    return out


def history_columns(schema: NodeSchema, before: int, time: int, history: HistoryConfig) -> list[int]:
    """Non-event nodes preceding ``before`` inside the lag window of ``time``."""
    times = {time - lag for lag in history.lags}
    cols = []
    for pos, node in enumerate(schema.nodes[:before]):
        if node.role in EVENT_ROLES:
            continue
        if node.time in times or (history.baseline and (node.role is Role.BASELINE or node.time == 0)):
            cols.append(pos)
    return cols


def at_risk(dataset: LongitudinalDataset, before: int) -> np.ndarray:
    """Subjects with no censoring/death event at any node preceding ``before``."""
    return dataset.uncensored_through(before - 1) if before > 0 else np.ones(dataset.n, dtype=bool)


def rule_assignments(dataset: LongitudinalDataset, rule: InterventionRule, blocks: Sequence[Block]) -> dict[int, np.ndarray]:
    """Rule treatment per treatment position, evaluated on observed covariates.

    The prior fed to sticky rules is the rule's own previous assignment.
    """
    schema = dataset.schema
    out = {}
    prior = None
    for b in blocks:
        if b.treatment is None:
            continue
        node = schema.nodes[b.treatment]
        if prior is None:
            prev = schema.find(node.var, node.time - 1)
            prior = np.zeros(dataset.n) if prev is None else np.nan_to_num(dataset.column(prev.name))
        cov = {
            n.var: dataset.values[:, p]
            for p, n in enumerate(schema.nodes[: b.treatment])
            if n.time == node.time and n.role not in INTERVENTION_ROLES
        }
        d = np.asarray(evaluate_rule(rule, cov, prior), dtype=float)
        d = np.broadcast_to(d, (dataset.n,)).copy()
        out[b.treatment] = d
        prior = d
    return out


def previous_treatment(schema: NodeSchema, position: int) -> int | None:
    """Position of the latest treatment node strictly before ``position``."""
    for p in range(position - 1, -1, -1):
        if schema.nodes[p].role is Role.TREATMENT:
            return p
    return None


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


@dataclass
class ConstantFit:
    value: float
    n_features: int
    weights: np.ndarray = field(default_factory=lambda: np.ones(1))

    def predict(self, X) -> np.ndarray:
        return np.full(len(X), self.value)


def fit_predictor(y, X, family: str, model, folds: int, seed: int):
    """Fit ``model`` (a learner or a learner set); constant responses short-circuit."""
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise EstimationError("no subjects at risk")
    if np.ptp(y) == 0:
        return ConstantFit(float(y[0]), X.shape[1])
    members = [model] if isinstance(model, lrn.Learner) else list(model)
    if len(members) > 1 and len(y) < folds:
        folds = max(2, len(y))
        if len(y) < 2:
            return ConstantFit(float(y.mean()), X.shape[1])
    return lrn.fit_model(y, X, family, model, folds=folds, seed=seed)


def model_weights(fit) -> dict[str, float]:
    if isinstance(fit, ConstantFit):
        return {"constant": 1.0}
    if isinstance(fit, lrn.SingleFit):
        return {fit.fitted.learner.name: 1.0}
    return {l.name: float(w) for l, w in zip(fit.learners, fit.weights)}


def resolve_learners(spec) -> object:
    if isinstance(spec, str):
        if spec in lrn.LEARNER_SETS:
            return lrn.LEARNER_SETS[spec]
        named = {l.name: l for l in (lrn.MEAN, lrn.GLM, lrn.GLM_INTERACTIONS, lrn.GLM_STEP_AIC, lrn.GLM_SATURATED)}
        if spec in named:
            return named[spec]
        raise ValueError(f"unknown learner spec {spec!r}")
    return spec


# ---------------------------------------------------------------- results

@dataclass
class EstimateResult:
    method: str
    rule: str
    t: int
    psi: float
    se: float | None
    ci: tuple[float, float] | None
    per_time: list[dict] = field(default_factory=list)
    ic: np.ndarray | None = None
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ci is not None and not (self.ci[0] <= self.psi <= self.ci[1]):
            raise ValueError("confidence interval must contain the point estimate")
        if self.se is not None and self.se < 0:
            raise ValueError("standard error must be non-negative")

    @property
    def diagnostics(self) -> dict:
        last = self.per_time[-1] if self.per_time else {}
        return {k: last.get(k) for k in ("mean_cc", "pct_truncated", "usable_n")}

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "rule": self.rule,
            "t": self.t,
            "psi": self.psi,
            "se": self.se,
            "ci": list(self.ci) if self.ci is not None else None,
            "diagnostics": self.diagnostics,
            "per_time": self.per_time,
            "notes": self.notes,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(_jsonable(self.to_dict()), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def write_per_time_csv(self, path) -> None:
        cols = ["t", "usable_n", "mean_cc", "pct_truncated", "epsilon", "no_update"]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in self.per_time:
                w.writerow(["" if row.get(c) is None else row.get(c) for c in cols])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def normal_ci(psi: float, se: float) -> tuple[float, float]:
    return (psi - Z95 * se, psi + Z95 * se)

