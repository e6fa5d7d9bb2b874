"""Weighted GLMs by IRLS, intercept fluctuation, stepwise AIC, simplex NNLS.

Families: ``gaussian`` (identity link), ``binomial`` and ``quasibinomial``
(logit link).  Quasi-binomial fits accept any response in [0, 1] and share
the binomial point estimates; no dispersion is estimated.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy.special import expit, logit, xlogy

log = logging.getLogger(__name__)

FAMILIES = ("gaussian", "binomial", "quasibinomial")
PRED_CLAMP = 1e-5
SEPARATION_BOUND = 15.0
ALIAS_TOL = 1e-7


# ------------------------------------------------------------ low level

def _check_response(y, family):
    if family == "binomial" and not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("binomial response must be 0/1")
    if family == "quasibinomial" and ((y < 0).any() or (y > 1).any()):
        raise ValueError("quasibinomial response must lie in [0, 1]")
    if not np.isfinite(y).all():
        raise ValueError("response contains non-finite values")


def deviance(y, mu, w, family) -> float:
    if family == "gaussian":
        return float(np.sum(w * (y - mu) ** 2))
    mu = np.clip(mu, 1e-300, 1 - 1e-16)
    terms = xlogy(y, y / mu) + xlogy(1 - y, (1 - y) / (1 - mu))
    return float(2 * np.sum(w * terms))


def aliased_columns(X, w=None, tol=ALIAS_TOL) -> np.ndarray:
    """Boolean mask of columns to keep; aliased columns dropped left to right."""
    if X.shape[1] == 0:
        return np.zeros(0, dtype=bool)
    if w is not None:
        X = X[w > 0] * np.sqrt(w[w > 0])[:, None]
    norms = np.linalg.norm(X, axis=0)
    keep = norms > 0
    if X.shape[0] == 0:
        return keep
    R = np.linalg.qr(X, mode="r")
    diag = np.abs(np.diag(R))
    k = len(diag)
    keep[:k] &= diag > tol * np.maximum(norms[:k], 1e-300)
    keep[k:] = False
    return keep


@dataclass
class IrlsResult:
    coef: np.ndarray
    keep: np.ndarray
    converged: bool
    n_iter: int
    deviance: float
    separated: bool = False
    deviance_path: list = field(default_factory=list)

    @property
    def rank(self) -> int:
        return int(self.keep.sum())

    def linear_predictor(self, X, offset=None):
        eta = X[:, self.keep] @ self.coef[self.keep] if self.keep.any() else np.zeros(len(X))
        if offset is not None:
            eta = eta + offset
        return eta


def _solve_wls(X, z, W):
    XtW = X.T * W
    A = XtW @ X
    b = XtW @ z
    try:
        c, lower = scipy.linalg.cho_factor(A, check_finite=False)
        return scipy.linalg.cho_solve((c, lower), b, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        sw = np.sqrt(W)
        return np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)[0]


def irls(
    X,
    y,
    family: str = "gaussian",
    weights=None,
    offset=None,
    max_iter: int = 50,
    tol: float = 1e-8,
    start=None,
) -> IrlsResult:
    """Fit a weighted GLM on a design matrix.

    ``start`` is an optional full-length coefficient vector (warm start).
    Columns aliased in the weighted design are dropped (coefficient 0,
    ``keep`` false).
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if (w < 0).any():
        raise ValueError("weights must be non-negative")
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    pos = w > 0
    if not pos.any():
        raise ValueError("no rows with positive weight")
    _check_response(y[pos], family)

    # column scaling keeps the normal equations well conditioned
    scale = np.max(np.abs(X[pos]), axis=0) if p else np.ones(0)
    scale = np.where(scale > 0, scale, 1.0)
    Xs = X[pos] / scale
    yp, wp, op = y[pos], w[pos], off[pos]

    keep = aliased_columns(Xs, wp)
    Xk = Xs[:, keep]
    coef = np.zeros(p)

    if family == "gaussian":
        if Xk.shape[1]:
            bk = _solve_wls(Xk, yp - op, wp)
        else:
            bk = np.zeros(0)
        mu = Xk @ bk + op
        dev = deviance(yp, mu, wp, family)
        coef[keep] = bk / scale[keep]
        return IrlsResult(coef, keep, True, 1, dev, False, [dev])

    if start is not None and Xk.shape[1]:
        bk = (np.asarray(start, dtype=float) * scale)[keep]
        eta = Xk @ bk + op
    else:
        bk = np.zeros(Xk.shape[1])
        mu0 = (wp * yp + 0.5) / (wp + 1.0)
        eta = logit(mu0)
    mu = expit(eta)
    dev_old = deviance(yp, mu, wp, family) if start is not None else math.inf
    path = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        var = np.clip(mu * (1 - mu), 1e-12, None)
        z = eta - op + (yp - mu) / var
        W = wp * var
        if Xk.shape[1]:
            b_new = _solve_wls(Xk, z, W)
        else:
            b_new = np.zeros(0)
        eta_new = Xk @ b_new + op
        dev_new = deviance(yp, expit(eta_new), wp, family)
        halvings = 0
        while (not np.isfinite(dev_new) or dev_new > dev_old * (1 + 1e-12) + 1e-12) and halvings < 30:
            if not np.isfinite(dev_old):
                break
            b_new = 0.5 * (b_new + bk)
            eta_new = Xk @ b_new + op
            dev_new = deviance(yp, expit(eta_new), wp, family)
            halvings += 1
        path.append(dev_new)
        change = abs(dev_new - dev_old) / (abs(dev_new) + 0.1) if np.isfinite(dev_old) else math.inf
        bk, eta, mu, dev_old = b_new, eta_new, expit(eta_new), dev_new
        if change < tol:
            converged = True
            break
    coef[keep] = bk / scale[keep]
    # judged on the caller's column scale; constant (intercept) columns excluded
    slopes = keep & (np.ptp(X[pos], axis=0) > 0)
    separated = bool(slopes.any() and np.max(np.abs(coef[slopes])) > SEPARATION_BOUND)
    return IrlsResult(coef, keep, converged, it, float(dev_old), separated, path)


def score(X, y, coef, family, weights=None, offset=None) -> np.ndarray:
    """Score vector X'W(y - mu) at ``coef`` (canonical links)."""
    X = np.asarray(X, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    eta = X @ coef + (0 if offset is None else offset)
    mu = eta if family == "gaussian" else expit(eta)
    return X.T @ (w * (np.asarray(y) - mu))


def aic(y, mu, w, family, n_params) -> float:
    """AIC; for ``quasibinomial`` the binomial log-likelihood with continuous response."""
    pos = w > 0
    y, mu, w = y[pos], mu[pos], w[pos]
    if family == "gaussian":
        nobs = len(y)
        dev = max(float(np.sum(w * (y - mu) ** 2)), 1e-300)
        return nobs * (math.log(2 * math.pi * dev / nobs) + 1) + 2 - float(np.sum(np.log(w))) + 2 * n_params
    mu = np.clip(mu, 1e-300, 1 - 1e-16)
    ll = float(np.sum(w * (xlogy(y, mu) + xlogy(1 - y, 1 - mu))))
    return -2 * ll + 2 * n_params


# ------------------------------------------------------------ spec level

@dataclass(frozen=True)
class GlmSpec:
    family: str
    terms: tuple[str, ...] = ()
    interactions: tuple[tuple[str, str], ...] = ()
    offset: str | None = None
    weights: str | None = None
    intercept: bool = True
    response: str = "y"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "interactions", tuple(tuple(p) for p in self.interactions))

    @property
    def column_names(self) -> list[str]:
        names = ["(Intercept)"] if self.intercept else []
        names += list(self.terms)
        names += [f"{a}:{b}" for a, b in self.interactions]
        return names


def design_matrix(spec: GlmSpec, data: Mapping[str, np.ndarray]) -> np.ndarray:
    cols = []
    n = len(next(iter(data.values())))
    if spec.intercept:
        cols.append(np.ones(n))
    for t in spec.terms:
        cols.append(np.asarray(data[t], dtype=float))
    for a, b in spec.interactions:
        cols.append(np.asarray(data[a], dtype=float) * np.asarray(data[b], dtype=float))
    return np.column_stack(cols) if cols else np.empty((n, 0))


@dataclass
class GlmFit:
    spec: GlmSpec
    coefficients: np.ndarray
    converged: bool
    n_iter: int
    deviance: float
    aic: float
    dropped: list[str]
    separated: bool = False

    def predict(self, data: Mapping[str, np.ndarray], offset=None) -> np.ndarray:
        X = design_matrix(self.spec, data)
        eta = X @ self.coefficients
        if offset is not None:
            eta = eta + offset
        elif self.spec.offset is not None:
            eta = eta + np.asarray(data[self.spec.offset], dtype=float)
        return eta if self.spec.family == "gaussian" else expit(eta)


def fit_glm(spec: GlmSpec, data: Mapping[str, np.ndarray], **irls_kw) -> GlmFit:
    """Fit ``spec`` to named columns by IRLS."""
    X = design_matrix(spec, data)
    y = np.asarray(data[spec.response], dtype=float)
    w = None if spec.weights is None else np.asarray(data[spec.weights], dtype=float)
    off = None if spec.offset is None else np.asarray(data[spec.offset], dtype=float)
    res = irls(X, y, spec.family, w, off, **irls_kw)
    names = spec.column_names
    dropped = [nm for nm, k in zip(names, res.keep) if not k]
    if dropped:
        log.info("dropped aliased columns %s", dropped)
    eta = res.linear_predictor(X, off)
    mu = eta if spec.family == "gaussian" else expit(eta)
    w_all = np.ones(len(y)) if w is None else w
    a = aic(y, mu, w_all, spec.family, res.rank) if spec.family != "quasibinomial" else float("nan")
    return GlmFit(spec, res.coef, res.converged, res.n_iter, res.deviance, a, dropped, res.separated)


# ------------------------------------------------------------ fluctuation

@dataclass
class Fluctuation:
    predictions: np.ndarray
    epsilon: float
    no_update: bool
    converged: bool


def fluctuate_intercept(initial, response, weights, clamp: float = PRED_CLAMP, tol: float = 1e-12) -> Fluctuation:
    """Intercept-only quasi-binomial fit with offset ``logit(initial)``.

    Solves sum_i w_i (y_i - expit(o_i + eps)) = 0 for eps and returns the
    updated predictions for every row, zero-weight rows included.
    """
    initial = np.asarray(initial, dtype=float)
    w = np.asarray(weights, dtype=float)
    if (w < 0).any():
        raise ValueError("weights must be non-negative")
    pos = w > 0
    if not pos.any():
        return Fluctuation(initial.copy(), 0.0, True, True)
    y = np.asarray(response, dtype=float)[pos]
    _check_response(y, "quasibinomial")
    off_all = logit(np.clip(initial, clamp, 1 - clamp))
    off, wp = off_all[pos], w[pos]
    total = wp.sum()

    def f(eps):
        return float(np.sum(wp * (y - expit(off + eps))))

    lo, hi = -60.0, 60.0
    eps, converged = 0.0, False
    for _ in range(200):
        s = f(eps)
        if abs(s) <= tol * total:
            converged = True
            break
        if s > 0:
            lo = eps
        else:
            hi = eps
        p = expit(off + eps)
        d = float(np.sum(wp * p * (1 - p)))
        step = s / d if d > 0 else math.inf
        nxt = eps + step
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        if nxt == eps:
            converged = True
            break
        eps = nxt
    return Fluctuation(expit(off_all + eps), eps, False, converged)


# ------------------------------------------------------------ stepwise AIC

def stepwise_aic_columns(X, y, family, weights=None, start=None, universe=None, max_steps=100):
    """Bidirectional stepwise selection on design columns; returns kept column indices.

    Column 0 is treated as an always-present intercept when ``start`` and
    ``universe`` are left at their defaults.  Ties go to the lowest
    column index (drops before adds).
    """
    n, p = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    universe = list(range(1, p)) if universe is None else list(universe)
    current = set(universe if start is None else start)
    forced = [j for j in range(p) if j not in universe]

    def score_set(cols):
        idx = forced + sorted(cols)
        res = irls(X[:, idx], y, family, w)
        eta = res.linear_predictor(X[:, idx])
        mu = eta if family == "gaussian" else expit(eta)
        return aic(y, mu, w, family, res.rank)

    cache = {}

    def cached(cols):
        key = frozenset(cols)
        if key not in cache:
            cache[key] = score_set(cols)
        return cache[key]

    best = cached(current)
    for _ in range(max_steps):
        moves = [(j, current - {j}) for j in sorted(current)]
        moves += [(j, current | {j}) for j in universe if j not in current]
        scored = [(cached(c), k, c) for k, (j, c) in enumerate(moves)]
        val, _, cols = min(scored, key=lambda t: (t[0], t[1]))
        if val < best - 1e-10:
            best, current = val, cols
        else:
            break
    return forced + sorted(current)


def stepwise_aic(base: GlmSpec, candidates: Sequence[str], data: Mapping[str, np.ndarray]) -> GlmSpec:
    """Greedy add/drop by AIC starting from ``base``; candidates may be added."""
    if base.family not in ("gaussian", "binomial"):
        raise ValueError("stepwise_aic needs a gaussian or binomial family")
    terms = list(base.terms) + [c for c in candidates if c not in base.terms]
    full = replace(base, terms=tuple(terms), interactions=())
    X = design_matrix(full, data)
    y = np.asarray(data[base.response], dtype=float)
    w = None if base.weights is None else np.asarray(data[base.weights], dtype=float)
    off = 1 if base.intercept else 0
    start = list(range(off, off + len(base.terms)))
    chosen = stepwise_aic_columns(X, y, base.family, w, start=start, universe=list(range(off, X.shape[1])))
    kept = [terms[j - off] for j in chosen if j >= off]
    return replace(base, terms=tuple(kept), interactions=())


# ------------------------------------------------------------ simplex NNLS

def nnls_simplex(Z, y, tol: float = 1e-10, max_iter: int = 500) -> np.ndarray:
    """Minimise ||y - Z a||^2 over the probability simplex (primal active set)."""
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    K = Z.shape[1]
    if K == 1:
        return np.ones(1)
    Q = Z.T @ Z
    c = Z.T @ y
    scale = max(float(np.max(np.abs(np.diag(Q)))), 1e-300)

    def loss(a):
        r = y - Z @ a
        return float(r @ r)

    vertex_loss = [loss(np.eye(K)[k]) for k in range(K)]
    k0 = int(np.argmin(vertex_loss))
    alpha = np.zeros(K)
    alpha[k0] = 1.0
    work = {k0}
    for _ in range(max_iter):
        W = sorted(work)
        m = len(W)
        kkt = np.zeros((m + 1, m + 1))
        kkt[:m, :m] = Q[np.ix_(W, W)]
        kkt[:m, m] = 1.0
        kkt[m, :m] = 1.0
        rhs = np.concatenate([c[W], [1.0]])
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        cand = np.zeros(K)
        cand[W] = sol[:m]
        if (cand[W] >= -1e-14).all():
            alpha = np.clip(cand, 0.0, None)
            alpha /= alpha.sum()
            grad = Q @ alpha - c
            nu = -float(np.mean(grad[W]))
            mult = grad + nu
            outside = [k for k in range(K) if k not in work]
            if not outside:
                break
            worst = min(outside, key=lambda k: (mult[k], k))
            if mult[worst] >= -tol * scale:
                break
            work.add(worst)
        else:
            # move toward the subproblem solution until a coordinate hits zero
            direction = cand - alpha
            ratios = [
                (alpha[k] / -direction[k], k) for k in W if direction[k] < 0 and cand[k] < 0
            ]
            step, _ = min(ratios)
            step = min(max(step, 0.0), 1.0)
            alpha = alpha + step * direction
            for k in W:
                if alpha[k] <= 1e-15 and cand[k] < 0:
                    alpha[k] = 0.0
                    work.discard(k)
            alpha = np.clip(alpha, 0.0, None)
            alpha /= alpha.sum()
    if loss(alpha) > min(vertex_loss):
        alpha = np.eye(K)[k0]
    return alpha


def kkt_residual(Z, y, alpha) -> float:
    """Max violation of the simplex-NNLS optimality conditions."""
    Z = np.asarray(Z, dtype=float)
    grad = Z.T @ (Z @ alpha - y)
    support = alpha > 1e-12
    nu = -float(np.mean(grad[support]))
    mult = grad + nu
    on = np.abs(mult[support]).max() if support.any() else 0.0
    off = max(0.0, -mult[~support].min()) if (~support).any() else 0.0
    return float(max(on, off))


def pairwise_products(X, names: Sequence[str]):
    """All pairwise products of the columns of X, in (i < j) order."""
    cols, out_names = [], []
    for i, j in itertools.combinations(range(X.shape[1]), 2):
        cols.append(X[:, i] * X[:, j])
        out_names.append(f"{names[i]}:{names[j]}")
    if not cols:
        return np.empty((X.shape[0], 0)), []
    return np.column_stack(cols), out_names
