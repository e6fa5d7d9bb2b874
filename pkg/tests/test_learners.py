import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from longicausal import learners as L


class Broken(L.Learner):
    def fit(self, X, y, family, design=None, start=None):
        raise L.LearnerFailure("always fails")


BROKEN = Broken("broken", L.Kind.GLM_MAIN)


def linear_data(seed, n=300, p=3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = X @ np.arange(1, p + 1) + rng.normal(size=n)
    return X, y


def test_sets_nested():
    assert set(L.SET1) < set(L.SET2) < set(L.SET3)
    assert L.SET2.set_id == "set2"


def test_mean_only_library():
    X, y = linear_data(0)
    fit = L.fit_super_learner(y, X, "gaussian", [L.MEAN], folds=5)
    np.testing.assert_allclose(fit.predict(X), y.mean())
    assert fit.weights.tolist() == [1.0]


def test_dominance_and_simplex():
    X, y = linear_data(1)
    fit = L.fit_super_learner(y, X, "gaussian", L.SET2, folds=10, seed=3)
    assert (fit.weights >= 0).all() and abs(fit.weights.sum() - 1) < 1e-12
    assert fit.sl_cv_risk <= np.nanmin(fit.cv_risk) + 1e-10
    mean_k = [l.name for l in fit.learners].index("mean")
    assert fit.sl_cv_risk <= fit.cv_risk[mean_k]


def test_nonlinear_dgp_uses_interactions():
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(200, 3))
        y = X[:, 0] + 2.0 * X[:, 0] * X[:, 1] + rng.normal(scale=0.5, size=200)
        fit = L.fit_super_learner(y, X, "gaussian", L.SET2, folds=10, seed=seed)
        k = [l.name for l in fit.learners].index("glm_interactions")
        hits += fit.weights[k] > 0
    assert hits >= 11


def test_fold_determinism():
    X, y = linear_data(2)
    a = L.fit_super_learner(y, X, "gaussian", L.SET2, folds=5, seed=9)
    b = L.fit_super_learner(y, X, "gaussian", L.SET2, folds=5, seed=9)
    np.testing.assert_array_equal(a.weights, b.weights)
    np.testing.assert_array_equal(a.folds, b.folds)


def test_zero_weight_learner_removal():
    X, y = linear_data(4)
    fit = L.fit_super_learner(y, X, "gaussian", L.SET2, folds=10, seed=1)
    zero = [l for l, w in zip(fit.learners, fit.weights) if w == 0]
    assert zero, "expected the mean learner to get zero weight"
    kept = [l for l in fit.learners if l not in zero]
    again = L.fit_super_learner(y, X, "gaussian", kept, folds=10, seed=1)
    assert abs(again.sl_cv_risk - fit.sl_cv_risk) <= 1e-10


def test_failed_learner_dropped():
    X, y = linear_data(5)
    fit = L.fit_super_learner(y, X, "gaussian", [BROKEN, L.GLM], folds=5)
    assert fit.failed == ["broken"]
    assert fit.weights.tolist() == [0.0, 1.0]
    with pytest.raises(L.LearnerFailure, match="empty library"):
        L.fit_super_learner(y, X, "gaussian", [BROKEN], folds=5)


def test_fold_preconditions():
    X, y = linear_data(6, n=5)
    with pytest.raises(ValueError):
        L.fit_super_learner(y, X, "gaussian", L.SET2, folds=10)
    with pytest.raises(ValueError):
        L.fit_super_learner(y, X, "gaussian", L.SET2, folds=1)


def test_prediction_schema_mismatch():
    X, y = linear_data(7)
    fit = L.fit_super_learner(y, X, "gaussian", L.SET2, folds=5)
    with pytest.raises(ValueError):
        fit.predict(X[:, :2])


def test_unit_weight_equals_member():
    X, y = linear_data(8)
    fit = L.fit_super_learner(y, X, "gaussian", L.SET2, folds=5)
    fit.weights = np.array([1.0, 0.0, 0.0])
    np.testing.assert_array_equal(fit.predict(X), fit.fits[0].predict(X))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_binary_convexity(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(150, 3))
    y = (rng.uniform(size=150) < expit(X[:, 0] - X[:, 1] * X[:, 2])).astype(float)
    fit = L.fit_super_learner(y, X, "binomial", L.SET2, folds=5, seed=seed)
    Xn = rng.normal(size=(40, 3))
    members = np.column_stack([m.predict(Xn) for m in fit.fits if m is not None])
    pred = fit.predict(Xn)
    assert (pred >= members.min(axis=1) - 1e-12).all()
    assert (pred <= members.max(axis=1) + 1e-12).all()
    assert (fit.weights >= 0).all() and abs(fit.weights.sum() - 1) <= 1e-12


def test_interaction_cap():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 8))
    d = L.GLM_INTERACTIONS.design(X)
    assert d(X).shape[1] <= 60 // 5


def test_stepwise_learner_runs():
    X, y = linear_data(9, p=4)
    fit = L.fit_super_learner(y, X, "gaussian", L.SET3, folds=5)
    assert "glm_step_aic" not in fit.failed


def test_saturated_learner_reproduces_cell_means():
    rng = np.random.default_rng(3)
    X = rng.integers(0, 2, size=(400, 2)).astype(float)
    y = (rng.uniform(size=400) < 0.2 + 0.3 * X[:, 0] + 0.2 * X[:, 0] * X[:, 1]).astype(float)
    f = L.fit_model(y, X, "binomial", L.GLM_SATURATED)
    pred = f.predict(X)
    for cell in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        m = (X[:, 0] == cell[0]) & (X[:, 1] == cell[1])
        np.testing.assert_allclose(pred[m], y[m].mean(), atol=1e-8)


def test_fit_model_single_learner_set():
    X, y = linear_data(10)
    f = L.fit_model(y, X, "gaussian", L.SET1)
    ols = np.linalg.lstsq(np.column_stack([np.ones(len(X)), X]), y, rcond=None)[0]
    np.testing.assert_allclose(f.predict(X), np.column_stack([np.ones(len(X)), X]) @ ols, atol=1e-8)
