"""Candidate learners and the super learner (convex stacking by V-fold CV)."""
from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import glm

log = logging.getLogger(__name__)


class LearnerFailure(RuntimeError):
    pass


class Kind(str, enum.Enum):
    MEAN = "mean"
    GLM_MAIN = "glm"
    GLM_INTERACTIONS = "glm_interactions"
    GLM_STEP_AIC = "glm_step_aic"
    GLM_SATURATED = "glm_saturated"


@dataclass(frozen=True)
class Learner:
    name: str
    kind: Kind

    def design(self, X: np.ndarray) -> "Design":
        """Design-matrix builder with transformation frozen on ``X``."""
        return Design.build(self.kind, X)

    def fit(self, X, y, family, design=None, start=None) -> "FittedLearner":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind is Kind.MEAN:
            return FittedLearner(self, family, None, np.array([float(np.mean(y))]), None)
        design = design or self.design(X)
        D = design(X)
        if self.kind is Kind.GLM_STEP_AIC:
            cols = glm.stepwise_aic_columns(D, y, family)
            D = D[:, cols]
            res = _checked(self.name, glm.irls(D, y, family))
            return FittedLearner(self, family, design, res.coef, np.asarray(cols))
        res = _checked(self.name, glm.irls(D, y, family, start=start))
        return FittedLearner(self, family, design, res.coef, None)


def _checked(name, res):
    # a separated fit never settles in deviance; its predictions are still used
    if res.separated:
        level = logging.DEBUG if res.converged else logging.INFO
        log.log(level, "%s: |coef| > %g (converged: %s)", name, glm.SEPARATION_BOUND, res.converged)
    elif not res.converged:
        raise LearnerFailure(f"{name}: IRLS did not converge")
    return res


@dataclass
class Design:
    """Standardise base columns, then expand to the learner's terms."""

    kind: Kind
    center: np.ndarray
    scale: np.ndarray
    base_cols: np.ndarray
    pairs: list = field(default_factory=list)
    subsets: list = field(default_factory=list)

    @classmethod
    def build(cls, kind: Kind, X: np.ndarray) -> "Design":
        X = np.asarray(X, dtype=float)
        sd = X.std(axis=0) if X.shape[0] else np.zeros(X.shape[1])
        base = np.flatnonzero(sd > 0)
        center = X.mean(axis=0) if X.shape[0] else np.zeros(X.shape[1])
        scale = np.where(sd > 0, sd, 1.0)
        d = cls(kind, center, scale, base)
        n = X.shape[0]
        if kind is Kind.GLM_INTERACTIONS:
            pairs = list(itertools.combinations(range(len(base)), 2))
            # keep total columns <= n/5, dropping the latest pairs first
            room = max(int(n // 5) - 1 - len(base), 0)
            d.pairs = pairs[:room]
        elif kind is Kind.GLM_SATURATED:
            d.subsets = [
                s for r in range(2, len(base) + 1) for s in itertools.combinations(range(len(base)), r)
            ]
        return d

    @property
    def n_features(self) -> int:
        return len(self.center)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} columns, got {X.shape[1]}")
        if self.kind is Kind.GLM_SATURATED:
            # raw indicator products: one parameter per covariate cell
            R = X[:, self.base_cols]
            cols = [np.ones(len(X)), R] + [np.prod(R[:, s], axis=1) for s in self.subsets]
            return np.column_stack(cols)
        Z = (X[:, self.base_cols] - self.center[self.base_cols]) / self.scale[self.base_cols]
        cols = [np.ones(len(X)), Z]
        if self.pairs:
            cols.append(np.column_stack([Z[:, i] * Z[:, j] for i, j in self.pairs]))
        return np.column_stack(cols)


@dataclass
class FittedLearner:
    learner: Learner
    family: str
    design: Design | None
    coef: np.ndarray
    columns: np.ndarray | None

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.learner.kind is Kind.MEAN:
            return np.full(len(X), self.coef[0])
        D = self.design(X)
        if self.columns is not None:
            D = D[:, self.columns]
        eta = D @ self.coef
        return eta if self.family == "gaussian" else expit(eta)


MEAN = Learner("mean", Kind.MEAN)
GLM = Learner("glm", Kind.GLM_MAIN)
GLM_INTERACTIONS = Learner("glm_interactions", Kind.GLM_INTERACTIONS)
GLM_STEP_AIC = Learner("glm_step_aic", Kind.GLM_STEP_AIC)
GLM_SATURATED = Learner("glm_saturated", Kind.GLM_SATURATED)


class LearnerSet(tuple):
    """Ordered candidate library; ``set_id`` names the preset if any."""

    def __new__(cls, members, set_id: str = "custom"):
        obj = super().__new__(cls, tuple(members))
        obj.set_id = set_id
        return obj

    def __getnewargs__(self):
        return (tuple(self), self.set_id)

    def __reduce__(self):
        return (LearnerSet, (tuple(self), self.set_id))


SET1 = LearnerSet([GLM], "set1")
SET2 = LearnerSet([GLM, MEAN, GLM_INTERACTIONS], "set2")
SET3 = LearnerSet([GLM, MEAN, GLM_INTERACTIONS, GLM_STEP_AIC], "set3")
LEARNER_SETS = {"set1": SET1, "set2": SET2, "set3": SET3}


def make_folds(n: int, folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    out = np.empty(n, dtype=int)
    out[perm] = np.arange(n) % folds
    return out


@dataclass
class SuperLearnerFit:
    learners: list[Learner]
    weights: np.ndarray
    cv_risk: np.ndarray
    cv_predictions: np.ndarray
    folds: np.ndarray
    fits: list
    failed: list[str]
    family: str
    n_features: int
    y: np.ndarray

    @property
    def sl_cv_risk(self) -> float:
        ok = [k for k, f in enumerate(self.fits) if f is not None]
        return float(np.mean((self.y - self.cv_predictions[:, ok] @ self.weights[ok]) ** 2))

    def predict(self, X) -> np.ndarray:
        return predict_super_learner(self, X)


def fit_super_learner(y, X, family: str, learners, folds: int = 10, seed: int = 0) -> SuperLearnerFit:
    """V-fold stacked fit; failing learners are dropped from the stack."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n = len(y)
    learners = list(learners)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if n < folds:
        raise ValueError(f"need at least {folds} rows for {folds}-fold CV, got {n}")
    fold_id = make_folds(n, folds, seed)
    K = len(learners)
    cv = np.full((n, K), np.nan)
    fits: list = [None] * K
    failed = []
    for k, lrn in enumerate(learners):
        try:
            design = lrn.design(X) if lrn.kind is not Kind.MEAN else None
            full = lrn.fit(X, y, family, design=design)
            for v in range(folds):
                test = fold_id == v
                start = full.coef if lrn.kind not in (Kind.MEAN, Kind.GLM_STEP_AIC) else None
                part = lrn.fit(X[~test], y[~test], family, design=design, start=start)
                cv[test, k] = part.predict(X[test])
            fits[k] = full
        except (LearnerFailure, np.linalg.LinAlgError, ValueError) as exc:
            log.warning("learner %s failed: %s", lrn.name, exc)
            failed.append(lrn.name)
            cv[:, k] = np.nan
    ok = [k for k in range(K) if fits[k] is not None]
    if not ok:
        raise LearnerFailure("empty library: every learner failed")
    risk = np.full(K, np.nan)
    risk[ok] = np.mean((cv[:, ok] - y[:, None]) ** 2, axis=0)
    alpha = np.zeros(K)
    alpha[ok] = glm.nnls_simplex(cv[:, ok], y)
    return SuperLearnerFit(learners, alpha, risk, cv, fold_id, fits, failed, family, X.shape[1], y)


def predict_super_learner(fit: SuperLearnerFit, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != fit.n_features:
        raise ValueError(
            f"design has {X.shape[1] if X.ndim == 2 else '?'} columns, model was trained on {fit.n_features}"
        )
    out = np.zeros(len(X))
    for a, member in zip(fit.weights, fit.fits):
        if a > 0:
            out = out + a * member.predict(X)
    if fit.family != "gaussian":
        out = np.clip(out, 0.0, 1.0)
    return out


@dataclass
class SingleFit:
    """A fixed learner fitted once, without cross-validation."""

    fitted: FittedLearner
    n_features: int
    weights: np.ndarray = field(default_factory=lambda: np.ones(1))

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.n_features:
            raise ValueError(f"design has {X.shape[1]} columns, model was trained on {self.n_features}")
        return self.fitted.predict(X)


def fit_model(y, X, family, model, folds: int = 10, seed: int = 0):
    """Fit a single :class:`Learner` directly or a :class:`LearnerSet` by super learning.

    A fixed learner that fails to converge is kept with a warning.
    """
    if isinstance(model, Learner):
        try:
            fitted = model.fit(X, y, family)
        except LearnerFailure:
            log.warning("%s did not converge; using last iterate", model.name)
            design = model.design(np.asarray(X, dtype=float))
            res = glm.irls(design(np.asarray(X, dtype=float)), y, family)
            fitted = FittedLearner(model, family, design, res.coef, None)
        return SingleFit(fitted, np.asarray(X).shape[1])
    members = list(model)
    if len(members) == 1:
        return fit_model(y, X, family, members[0], folds, seed)
    return fit_super_learner(y, X, family, members, folds=folds, seed=seed)
