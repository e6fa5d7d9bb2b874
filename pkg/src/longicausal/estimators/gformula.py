"""Parametric g-formula by forward Monte Carlo simulation.

Every non-baseline node gets a conditional model given its lagged history:
Gaussian with homoscedastic residuals for continuous nodes, logistic for
binary ones.  Simulation starts from observed baseline rows (cycled when
``n_sim`` exceeds ``n``) and walks forward in node order.  Under a rule the
treatment is set by the rule and censoring is switched off; in the natural
course both are drawn from their fitted models.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import learners as lrn
from ..longdata import (
    EVENT_ROLES,
    INTERVENTION_ROLES,
    InterventionRule,
    LongitudinalDataset,
    Role,
    ValueKind,
    evaluate_rule,
)
from .bootstrap import bootstrap_ci
from .common import (
    ConstantFit,
    EstimateResult,
    EstimationError,
    HistoryConfig,
    outcome_position,
    resolve_learners,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GFormulaConfig:
    model: object = "glm"  # a single learner; stacking gives no residual variance
    n_sim: int = 10_000
    seed: int = 0
    history: HistoryConfig = field(default_factory=HistoryConfig)
    maintain_treatment: bool = True
    outcome: str = "Y"
    confounder_order: tuple[str, ...] | None = None  # within-time permutation of confounders
    draw_outcome: bool = True  # False: use the conditional mean for the final outcome


@dataclass
class NodeModel:
    position: int
    regressors: list[int]
    binary: bool
    fit: object
    sigma: float = 0.0
    deterministic_from: int | None = None  # treatment held at 1 once this node is 1

    def mean(self, X) -> np.ndarray:
        return self.fit.predict(X)


@dataclass
class GFormulaModelBank:
    order: list[int]  # simulation order of node positions (baseline excluded)
    baseline: list[int]
    models: dict[int, NodeModel]
    outcome_pos: int


def _simulation_order(dataset: LongitudinalDataset, last: int, config: GFormulaConfig):
    schema = dataset.schema
    baseline = [p for p, n in enumerate(schema.nodes[: last + 1]) if n.role is Role.BASELINE or n.time == 0]
    rest = [p for p in range(last + 1) if p not in set(baseline)]
    if config.confounder_order:
        rank = {v: i for i, v in enumerate(config.confounder_order)}
        reordered = []
        for t in sorted({schema.nodes[p].time for p in rest}):
            slice_ = [p for p in rest if schema.nodes[p].time == t]
            conf = [p for p in slice_ if schema.nodes[p].role is Role.CONFOUNDER]
            conf_sorted = sorted(conf, key=lambda p: rank.get(schema.nodes[p].var, len(rank)))
            it = iter(conf_sorted)
            reordered += [next(it) if schema.nodes[p].role is Role.CONFOUNDER else p for p in slice_]
        rest = reordered
    return baseline, rest


def _regressors(dataset, baseline, order, j, history: HistoryConfig) -> list[int]:
    schema = dataset.schema
    time = schema.nodes[order[j]].time
    times = {time - lag for lag in history.lags}
    prior = list(baseline) + order[:j]
    cols = []
    for p in prior:
        node = schema.nodes[p]
        if node.role in EVENT_ROLES:
            continue
        if node.time in times or (history.baseline and p in baseline):
            cols.append(p)
    return sorted(cols)


def fit_model_bank(
    dataset: LongitudinalDataset,
    T: int,
    config: GFormulaConfig = GFormulaConfig(),
    natural: bool = False,
) -> GFormulaModelBank:
    """Fit conditional models for every node up to the outcome at ``T``.

    Treatment and event models are fitted only when ``natural`` is true.
    """
    schema = dataset.schema
    ypos = outcome_position(schema, config.outcome, T)
    baseline, order = _simulation_order(dataset, ypos, config)
    learner = resolve_learners(config.model)
    if not isinstance(learner, lrn.Learner):
        raise ValueError("the g-formula needs a single learner, not a learner set")
    x = dataset.values
    models = {}
    for j, pos in enumerate(order):
        node = schema.nodes[pos]
        if node.role in INTERVENTION_ROLES and not natural:
            continue
        cols = _regressors(dataset, baseline, order, j, config.history)
        rows = ~np.isnan(x[:, pos])
        for p in order[:j]:
            if schema.nodes[p].role in EVENT_ROLES:
                rows &= x[:, p] == 0.0
        deterministic = None
        if node.role is Role.TREATMENT and config.maintain_treatment:
            prev = [p for p in order[:j] if schema.nodes[p].role is Role.TREATMENT]
            if prev:
                deterministic = prev[-1]
                rows &= x[:, prev[-1]] != 1.0
        binary = node.kind is ValueKind.BINARY or node.role in INTERVENTION_ROLES
        y = x[rows, pos]
        X = x[rows][:, cols]
        if y.size == 0:
            fit = ConstantFit(0.0, len(cols))
            sigma = 0.0
        elif np.ptp(y) == 0:
            log.warning("node %s is constant among subjects at risk; using a point mass", node.name)
            fit, sigma = ConstantFit(float(y[0]), len(cols)), 0.0
        else:
            fit = lrn.fit_model(y, X, "binomial" if binary else "gaussian", learner)
            sigma = 0.0
            if not binary:
                resid = y - fit.predict(X)
                k = len(fit.fitted.coef) if hasattr(fit, "fitted") else 1
                sigma = float(np.sqrt(np.sum(resid**2) / max(len(y) - k, 1)))
        models[pos] = NodeModel(pos, cols, binary, fit, sigma, deterministic)
    return GFormulaModelBank(order, baseline, models, ypos)


def simulate_forward(
    dataset: LongitudinalDataset,
    bank: GFormulaModelBank,
    rule: InterventionRule | None,
    n_sim: int,
    seed: int,
    draw_outcome: bool = True,
) -> np.ndarray:
    """Simulated node values, shape (n_sim, n_nodes); NaN after simulated events."""
    schema = dataset.schema
    rng = np.random.default_rng(seed)
    sim = np.full((n_sim, len(schema)), np.nan)
    idx = np.arange(n_sim) % dataset.n
    for p in bank.baseline:
        sim[:, p] = dataset.values[idx, p]
    alive = np.ones(n_sim, dtype=bool)
    last_treat = None
    for j, pos in enumerate(bank.order):
        node = schema.nodes[pos]
        rows = alive
        if node.role is Role.TREATMENT and rule is not None:
            cov = {
                schema.nodes[p].var: sim[:, p]
                for p in bank.baseline + bank.order[:j]
                if schema.nodes[p].time == node.time and schema.nodes[p].role not in INTERVENTION_ROLES
            }
            if last_treat is None:
                prev = schema.find(node.var, node.time - 1)
                prior = np.zeros(n_sim) if prev is None else np.nan_to_num(sim[:, schema.position(prev.name)])
            else:
                prior = sim[:, last_treat]
            d = np.broadcast_to(np.asarray(evaluate_rule(rule, cov, prior), dtype=float), (n_sim,))
            sim[rows, pos] = d[rows]
            last_treat = pos
            continue
        if node.role in EVENT_ROLES and rule is not None:
            sim[rows, pos] = 0.0
            continue
        m = bank.models[pos]
        mu = m.mean(sim[rows][:, m.regressors])
        if pos == bank.outcome_pos and not draw_outcome:
            value = mu
        elif m.binary:
            value = (rng.random(mu.size) < mu).astype(float)
            if m.deterministic_from is not None:
                value = np.where(sim[rows, m.deterministic_from] == 1.0, 1.0, value)
        else:
            value = mu + m.sigma * rng.standard_normal(mu.size)
        sim[rows, pos] = value
        if node.role is Role.TREATMENT:
            last_treat = pos
        if node.role in EVENT_ROLES:
            alive = alive & (sim[:, pos] != 1.0)
    return sim


def _psi(dataset, rule, T, config):
    bank = fit_model_bank(dataset, T, config)
    sim = simulate_forward(dataset, bank, rule, config.n_sim, config.seed, config.draw_outcome)
    y = sim[:, bank.outcome_pos]
    return float(y.mean()), float(y.std(ddof=1) / np.sqrt(len(y))), bank


def gformula_estimate(
    dataset: LongitudinalDataset,
    rule: InterventionRule,
    T: int,
    config: GFormulaConfig = GFormulaConfig(),
    bootstrap: int = 0,
    bootstrap_seed: int = 0,
) -> EstimateResult:
    """Parametric g-formula estimate of the mean outcome at ``T`` under ``rule``."""
    psi, mc_se, _ = _psi(dataset, rule, T, config)
    res = EstimateResult("gformula", rule.name or "custom", T, psi, None, None,
                         notes={"n_sim": config.n_sim, "mc_se": mc_se})
    if bootstrap:
        boot = bootstrap_ci(lambda ds: _psi(ds, rule, T, config)[0], dataset, bootstrap, bootstrap_seed)
        lo, hi = boot.ci
        res.ci = (min(lo, psi), max(hi, psi))
        res.se = boot.se
        res.notes["bootstrap"] = {"B": bootstrap, "failures": boot.failures, "interval": list(boot.ci)}
    return res


# ---------------------------------------------------------------- natural course

@dataclass
class NaturalCourseTable:
    rows: list[dict]

    def to_csv(self, path) -> None:
        cols = ["t", "var", "observed", "simulated", "difference", "ci_low", "ci_high"]
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in self.rows:
                w.writerow({c: r.get(c) for c in cols})

    def max_abs_difference(self, var: str) -> float:
        return max(abs(r["difference"]) for r in self.rows if r["var"] == var)


def _course_means(dataset, T, config):
    bank = fit_model_bank(dataset, T, config, natural=True)
    sim = simulate_forward(dataset, bank, None, config.n_sim, config.seed, draw_outcome=True)
    schema = dataset.schema
    out = {}
    for pos in bank.order:
        node = schema.nodes[pos]
        if node.role in INTERVENTION_ROLES:
            continue
        obs = dataset.values[:, pos]
        out[(node.time, node.var)] = (float(np.nanmean(obs)), float(np.nanmean(sim[:, pos])))
    return out


def natural_course(
    dataset: LongitudinalDataset,
    T: int,
    config: GFormulaConfig = GFormulaConfig(),
    bootstrap: int = 0,
    bootstrap_seed: int = 0,
) -> NaturalCourseTable:
    """Observed vs simulated means per time among uncensored subjects.

    Treatment and censoring are drawn from their fitted models.  With
    ``bootstrap`` > 0 each row carries a percentile CI of the difference.
    """
    means = _course_means(dataset, T, config)
    rows = [
        {"t": t, "var": v, "observed": o, "simulated": s, "difference": s - o, "ci_low": None, "ci_high": None}
        for (t, v), (o, s) in means.items()
    ]
    if bootstrap:
        rng = np.random.default_rng(bootstrap_seed)
        diffs = {k: [] for k in means}
        failures = 0
        for _ in range(bootstrap):
            ds = dataset.take(rng.integers(0, dataset.n, dataset.n))
            try:
                m = _course_means(ds, T, config)
            except (EstimationError, ValueError, np.linalg.LinAlgError):
                failures += 1
                continue
            for k, (o, s) in m.items():
                diffs[k].append(s - o)
        if failures > 0.1 * bootstrap:
            raise EstimationError(f"{failures} of {bootstrap} bootstrap replicates failed")
        for r in rows:
            lo, hi = np.percentile(diffs[(r["t"], r["var"])], [2.5, 97.5])
            r["ci_low"], r["ci_high"] = float(lo), float(hi)
    return NaturalCourseTable(rows)
