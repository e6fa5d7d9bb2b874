"""Iterated conditional expectations with optional targeting (LTMLE).

Blocks are the intervention nodes (treatment, censoring, death) sharing a
time index.  Walking backwards over blocks k = K..1, the current pseudo
outcome is regressed on the history through block k among subjects still
uncensored, predictions are made with every treatment set to the rule, and,
when targeting, the predictions are fluctuated by an intercept-only logistic
fit weighted by the clever covariate of block k.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit

from .. import glm
from ..longdata import InterventionRule, LongitudinalDataset, OutcomeScale
from .bootstrap import bootstrap_ci
from .common import (
    Block,
    EstimateResult,
    EstimationError,
    HistoryConfig,
    at_risk,
    blocks_before,
    derive_seed,
    fit_predictor,
    history_columns,
    model_weights,
    normal_ci,
    outcome_position,
    previous_treatment,
    resolve_learners,
    rule_assignments,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LtmleConfig:
    learners: object = "set2"
    g_learners: object | None = None  # defaults to ``learners``
    folds: int = 10
    g_bound: float = 0.01
    seed: int = 0
    history: HistoryConfig = field(default_factory=HistoryConfig)
    maintain_treatment: bool = True
    outcome_scale: OutcomeScale | None = None
    outcome: str = "Y"
    clamp: float = glm.PRED_CLAMP
    target: bool = True

    def __post_init__(self):
        if not 0 < self.g_bound < 0.5 + 1e-12:
            raise ValueError("g_bound must lie in (0, 0.5]")


# ---------------------------------------------------------------- g-models

@dataclass
class GModelBank:
    """Fitted treatment and event probabilities, independent of the rule.

    ``treat_prob[pos]`` is P(A = 1 | history) and ``event_prob[pos]`` is
    P(event | history) for subjects at risk at that node (NaN elsewhere).
    """

    blocks: list[Block]
    treat_prob: dict[int, np.ndarray]
    event_prob: dict[int, np.ndarray]
    weights: dict[int, dict] = field(default_factory=dict)


def fit_g_models(dataset: LongitudinalDataset, config: LtmleConfig = LtmleConfig(), T: int | None = None) -> GModelBank:
    schema = dataset.schema
    T = schema.max_time if T is None else T
    blocks = [b for b in blocks_before(schema, len(schema)) if b.time <= T]
    model = resolve_learners(config.g_learners if config.g_learners is not None else config.learners)
    x = dataset.values
    treat_prob, event_prob, weights = {}, {}, {}
    for b in blocks:
        if b.treatment is not None:
            pos = b.treatment
            risk = at_risk(dataset, pos)
            det = np.zeros(dataset.n, dtype=bool)
            prev = previous_treatment(schema, pos)
            if config.maintain_treatment and prev is not None:
                det = risk & (x[:, prev] == 1.0)
            rows = risk & ~det
            p = np.full(dataset.n, np.nan)
            p[det] = 1.0
            if rows.any():
                hist = history_columns(schema, pos, b.time, config.history)
                fit = fit_predictor(x[rows, pos], x[rows][:, hist], "binomial", model, config.folds,
                                    derive_seed(config.seed, 2, pos))
                p[rows] = np.clip(fit.predict(x[rows][:, hist]), 0.0, 1.0)
                weights[pos] = model_weights(fit)
            treat_prob[pos] = p
        for pos in b.events:
            risk = at_risk(dataset, pos)
            hist = history_columns(schema, pos, b.time, config.history)
            p = np.full(dataset.n, np.nan)
            if risk.any():
                fit = fit_predictor(x[risk, pos], x[risk][:, hist], "binomial", model, config.folds,
                                    derive_seed(config.seed, 3, pos))
                p[risk] = np.clip(fit.predict(x[risk][:, hist]), 0.0, 1.0)
                weights[pos] = model_weights(fit)
            event_prob[pos] = p
    return GModelBank(blocks, treat_prob, event_prob, weights)


# ---------------------------------------------------------------- clever covariate

@dataclass
class CleverCovariateTrace:
    times: list[int]
    numerator: np.ndarray  # (n, K) adherent and uncensored through block k
    p_treat: np.ndarray  # probability of the assigned treatment (1 if the block has none)
    p_event: np.ndarray  # probability of remaining event-free within the block
    cum_raw: np.ndarray  # untruncated cumulative probability
    cum: np.ndarray  # truncated cumulative probability (>= g_bound)
    H: np.ndarray
    truncated: np.ndarray
    g_bound: float


def adherence_numerator(dataset: LongitudinalDataset, blocks: list[Block], d: dict[int, np.ndarray]) -> np.ndarray:
    x = dataset.values
    ok = np.ones(dataset.n, dtype=bool)
    out = np.zeros((dataset.n, len(blocks)), dtype=bool)
    for k, b in enumerate(blocks):
        if b.treatment is not None:
            ok = ok & (x[:, b.treatment] == d[b.treatment])
        for pos in b.events:
            ok = ok & (x[:, pos] == 0.0)
        out[:, k] = ok
    return out


def clever_covariate(
    dataset: LongitudinalDataset,
    rule: InterventionRule,
    bank: GModelBank,
    g_bound: float,
    blocks: list[Block] | None = None,
) -> CleverCovariateTrace:
    """Cumulative inverse probability of following the rule and staying uncensored.

    Each per-node probability and the running product are bounded below by
    ``g_bound``; rows with a zero numerator get H = 0.
    """
    blocks = bank.blocks if blocks is None else blocks
    d = rule_assignments(dataset, rule, blocks)
    num = adherence_numerator(dataset, blocks, d)
    n, K = dataset.n, len(blocks)
    p_treat = np.ones((n, K))
    p_event = np.ones((n, K))
    trunc_factors = np.ones((n, K))
    for k, b in enumerate(blocks):
        f = np.ones(n)
        if b.treatment is not None:
            p1 = bank.treat_prob[b.treatment]
            pa = np.where(d[b.treatment] == 1.0, p1, 1.0 - p1)
            p_treat[:, k] = pa
            f = f * np.maximum(np.nan_to_num(pa, nan=1.0), g_bound)
        for pos in b.events:
            pe = 1.0 - bank.event_prob[pos]
            p_event[:, k] *= pe
            f = f * np.maximum(np.nan_to_num(pe, nan=1.0), g_bound)
        trunc_factors[:, k] = f
    raw = np.cumprod(np.nan_to_num(p_treat * p_event, nan=1.0), axis=1)
    cum = np.maximum(np.cumprod(trunc_factors, axis=1), g_bound)
    H = np.where(num, 1.0 / cum, 0.0)
    truncated = num & (raw < g_bound)
    return CleverCovariateTrace([b.time for b in blocks], num, p_treat, p_event, raw, cum, H, truncated, g_bound)


# ---------------------------------------------------------------- ICE / LTMLE

def _outcome_scale(dataset, ypos, config) -> OutcomeScale:
    y = dataset.values[:, ypos]
    y = y[~np.isnan(y)]
    if y.size == 0:
        raise EstimationError("no subjects at risk: outcome never observed")
    scale = config.outcome_scale or OutcomeScale.from_data(y)
    if not scale.contains(y).all():
        raise EstimationError(f"observed outcomes fall outside [{scale.lower}, {scale.upper}]")
    return scale


def _ice(
    dataset: LongitudinalDataset,
    rule: InterventionRule,
    T: int,
    config: LtmleConfig,
    bank: GModelBank | None,
    method: str,
) -> EstimateResult:
    schema = dataset.schema
    ypos = outcome_position(schema, config.outcome, T)
    blocks = blocks_before(schema, ypos)
    if not blocks:
        raise EstimationError("no intervention nodes precede the outcome")
    scale = _outcome_scale(dataset, ypos, config)
    n, K = dataset.n, len(blocks)
    x = dataset.values
    d = rule_assignments(dataset, rule, blocks)
    xd = x.copy()
    for pos, col in d.items():
        xd[:, pos] = col

    trace = None
    if config.target:
        if bank is None:
            bank = fit_g_models(dataset, config, T)
        known = {b.time for b in bank.blocks}
        if any(b.time not in known for b in blocks):
            raise EstimationError("g-model bank does not cover every block before the outcome")
        trace = clever_covariate(dataset, rule, bank, config.g_bound, blocks)
        numerator = trace.numerator
    else:
        numerator = adherence_numerator(dataset, blocks, d)

    q_model = resolve_learners(config.learners)
    c = config.clamp
    Q = np.full((n, K + 1), np.nan)
    Q[:, K] = scale.transform(x[:, ypos])
    per_time: list[dict] = [None] * K
    for k in range(K - 1, -1, -1):
        b = blocks[k]
        response = Q[:, k + 1]
        fit_rows = at_risk(dataset, b.last + 1) & ~np.isnan(response)
        pred_rows = at_risk(dataset, b.first)
        if not fit_rows.any():
            raise EstimationError(f"no subjects at risk at time {b.time}")
        hist = history_columns(schema, b.last + 1, b.time, config.history)
        fit = fit_predictor(response[fit_rows], x[fit_rows][:, hist], "quasibinomial", q_model,
                            config.folds, derive_seed(config.seed, 1, k))
        qbar = np.full(n, np.nan)
        qbar[pred_rows] = np.clip(fit.predict(xd[pred_rows][:, hist]), 0.0, 1.0)
        row = {"t": b.time, "usable_n": int(numerator[:, k].sum()), "mean_cc": None, "pct_truncated": None,
               "epsilon": None, "no_update": None, "q_weights": model_weights(fit)}
        if trace is not None:
            h = trace.H[:, k]
            fl = glm.fluctuate_intercept(qbar[fit_rows], response[fit_rows], h[fit_rows], clamp=c)
            if fl.no_update:
                qstar = qbar
            else:
                qstar = np.full(n, np.nan)
                qstar[pred_rows] = expit(logit(np.clip(qbar[pred_rows], c, 1 - c)) + fl.epsilon)
            pos_h = h > 0
            hw = h[fit_rows]
            row.update(
                score=float(np.sum(hw * (response[fit_rows] - qstar[fit_rows])) / hw.sum()) if hw.sum() > 0 else 0.0,
                epsilon=float(fl.epsilon),
                no_update=bool(fl.no_update),
                mean_cc=float(h[pos_h].mean()) if pos_h.any() else None,
                pct_truncated=float(trace.truncated[pos_h, k].mean()) if pos_h.any() else None,
                converged=bool(fl.converged),
            )
            Q[:, k] = qstar
        else:
            Q[:, k] = qbar
        per_time[k] = row

    q0 = Q[:, 0]
    if np.isnan(q0).any():
        raise EstimationError("initial block does not cover every subject")
    psi_star = float(q0.mean())
    psi = float(scale.inverse(psi_star))
    if trace is not None:
        ic = q0 - psi_star
        for k in range(K):
            h = trace.H[:, k]
            term = h * (Q[:, k + 1] - Q[:, k])
            ic = ic + np.where(h > 0, term, 0.0)
        ic = ic * scale.width
        se = float(np.std(ic, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return _result(method, rule, T, psi, per_time, scale, se, normal_ci(psi, se), ic)
    return _result(method, rule, T, psi, per_time, scale)


def _result(method, rule, T, psi, per_time, scale, se=None, ci=None, ic=None) -> EstimateResult:
    return EstimateResult(
        method=method,
        rule=rule.name or "custom",
        t=T,
        psi=psi,
        se=se,
        ci=ci,
        per_time=per_time,
        ic=ic,
        notes={"outcome_scale": [scale.lower, scale.upper]},
    )


def ltmle_estimate(
    dataset: LongitudinalDataset,
    rule: InterventionRule,
    T: int,
    config: LtmleConfig = LtmleConfig(),
    bank: GModelBank | None = None,
) -> EstimateResult:
    """LTMLE of the mean outcome at ``T`` under ``rule``; CI from the influence curve.

    With ``config.target`` false the fluctuation is skipped and the result
    equals :func:`seq_gformula_estimate` without bootstrap.
    """
    method = "ltmle" if config.target else "seqg"
    return _ice(dataset, rule, T, config, bank, method)


def seq_gformula_estimate(
    dataset: LongitudinalDataset,
    rule: InterventionRule,
    T: int,
    config: LtmleConfig = LtmleConfig(),
    bootstrap: int = 0,
    bootstrap_seed: int = 0,
) -> EstimateResult:
    """Sequential g-formula; percentile bootstrap CI when ``bootstrap`` > 0."""
    cfg = replace(config, target=False)
    res = _ice(dataset, rule, T, cfg, None, "seqg")
    if bootstrap:
        boot = bootstrap_ci(lambda ds: _ice(ds, rule, T, cfg, None, "seqg").psi, dataset, bootstrap, bootstrap_seed)
        lo, hi = boot.ci
        res.ci = (min(lo, res.psi), max(hi, res.psi))
        res.se = boot.se
        res.notes["bootstrap"] = {"B": bootstrap, "failures": boot.failures, "interval": list(boot.ci)}
    return res

