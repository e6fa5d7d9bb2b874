import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit, logit

from longicausal import glm


def bisect(f, lo=-50.0, hi=50.0, iters=200):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def test_gaussian_equals_ols(rng):
    X = np.column_stack([np.ones(200), rng.normal(size=(200, 3)) * [1, 100, 0.01]])
    y = X @ [1.0, 2.0, -0.03, 40.0] + rng.normal(size=200)
    res = glm.irls(X, y, "gaussian")
    ols = np.linalg.lstsq(X, y, rcond=None)[0]
    np.testing.assert_allclose(res.coef, ols, rtol=0, atol=1e-8)
    assert res.converged


def test_weighted_gaussian_equals_wls(rng):
    X = np.column_stack([np.ones(100), rng.normal(size=100)])
    y = 3 - X[:, 1] + rng.normal(size=100)
    w = rng.uniform(0, 2, size=100)
    res = glm.irls(X, y, "gaussian", weights=w)
    sw = np.sqrt(w)
    ref = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]
    np.testing.assert_allclose(res.coef, ref, atol=1e-10)


def test_balanced_binomial_intercept_zero():
    y = np.array([0.0, 1.0] * 50)
    res = glm.irls(np.ones((100, 1)), y, "binomial")
    assert abs(res.coef[0]) < 1e-10


def test_logistic_matches_statsmodels(rng):
    X = np.column_stack([np.ones(500), rng.normal(size=(500, 2))])
    y = (rng.uniform(size=500) < expit(X @ [-0.5, 1.0, -2.0])).astype(float)
    res = glm.irls(X, y, "binomial")
    ref = sm.GLM(y, X, family=sm.families.Binomial()).fit(tol=1e-12).params
    np.testing.assert_allclose(res.coef, ref, atol=1e-7)
    assert res.converged


def test_quasibinomial_intercept_offset_matches_bisection(rng):
    n = 60
    off = rng.normal(size=n)
    w = rng.uniform(0.1, 3.0, size=n)
    y = rng.uniform(size=n)
    res = glm.irls(np.ones((n, 1)), y, "quasibinomial", weights=w, offset=off)
    root = bisect(lambda b: np.sum(w * (y - expit(off + b))))
    assert abs(res.coef[0] - root) < 1e-7


def test_aliased_columns_dropped_left_to_right(rng):
    x1 = rng.normal(size=50)
    X = np.column_stack([np.ones(50), x1, 2 * x1, rng.normal(size=50)])
    res = glm.irls(X, x1 + 1, "gaussian")
    assert res.keep.tolist() == [True, True, False, True]
    assert res.coef[2] == 0.0


def test_deviance_non_increasing(rng):
    X = np.column_stack([np.ones(300), rng.normal(size=(300, 4))])
    y = (rng.uniform(size=300) < expit(X @ [0.2, 2, -1, 0.5, 3])).astype(float)
    res = glm.irls(X, y, "binomial")
    path = np.array(res.deviance_path)
    assert np.all(np.diff(path) <= 1e-9 * path[:-1])


def test_fit_glm_spec_interface(rng):
    data = {"x": rng.normal(size=80), "z": rng.normal(size=80)}
    data["y"] = 1 + data["x"] - data["z"] + 0.5 * data["x"] * data["z"]
    spec = glm.GlmSpec("gaussian", terms=("x", "z"), interactions=(("x", "z"),))
    fit = glm.fit_glm(spec, data)
    np.testing.assert_allclose(fit.coefficients, [1, 1, -1, 0.5], atol=1e-10)
    np.testing.assert_allclose(fit.predict(data), data["y"], atol=1e-10)
    assert spec.column_names == ["(Intercept)", "x", "z", "x:z"]


def test_affine_rescaling_invariance(rng):
    X = np.column_stack([np.ones(400), rng.normal(size=(400, 2))])
    y = (rng.uniform(size=400) < expit(X @ [0.1, 1.0, -1.0])).astype(float)
    X2 = X.copy()
    X2[:, 1] = 250.0 * X[:, 1] - 17.0
    a = glm.irls(X, y, "binomial")
    b = glm.irls(X2, y, "binomial")
    np.testing.assert_allclose(expit(X @ a.coef), expit(X2 @ b.coef), atol=1e-8)


# -------------------------------------------------------------- fluctuation

def test_fluctuation_zero_weights_no_update():
    init = np.array([0.2, 0.5, 0.8])
    out = glm.fluctuate_intercept(init, np.array([0.9, 0.1, 0.3]), np.zeros(3))
    assert out.no_update
    np.testing.assert_array_equal(out.predictions, init)


def test_fluctuation_response_equal_to_initial_is_fixed_point():
    init = np.array([0.2, 0.5, 0.8, 0.35])
    out = glm.fluctuate_intercept(init, init, np.ones(4))
    assert abs(out.epsilon) < 1e-12
    np.testing.assert_allclose(out.predictions, init, atol=1e-12)


def test_fluctuation_toy_matches_bisection():
    init = np.array([0.2, 0.5, 0.8])
    y = np.full(3, 0.9)
    out = glm.fluctuate_intercept(init, y, np.ones(3))
    root = bisect(lambda b: np.sum(y - expit(logit(init) + b)))
    assert abs(out.epsilon - root) < 1e-10
    np.testing.assert_allclose(out.predictions, expit(logit(init) + root), atol=1e-10)


def test_fluctuation_updates_zero_weight_rows():
    init = np.array([0.3, 0.3, 0.6])
    out = glm.fluctuate_intercept(init, np.array([0.5, 0.5, 0.0]), np.array([1.0, 1.0, 0.0]))
    assert out.predictions[2] == pytest.approx(expit(logit(0.6) + out.epsilon))
    assert out.predictions[2] != 0.6


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.floats(0.001, 0.999), st.floats(0.0, 1.0), st.floats(0.0, 50.0)
        ),
        min_size=1,
        max_size=40,
    )
)
def test_fluctuation_score_identity(rows):
    init, y, w = map(np.array, zip(*rows))
    if w.sum() == 0:
        return
    out = glm.fluctuate_intercept(init, y, w)
    assert abs(np.sum(w * (y - out.predictions))) <= 1e-8 * w.sum()


# -------------------------------------------------------------- stepwise

def test_stepwise_recovers_signal(rng):
    n = 400
    data = {f"x{j}": rng.normal(size=n) for j in range(5)}
    data["y"] = 2.0 * data["x1"] + rng.normal(scale=0.5, size=n)
    base = glm.GlmSpec("gaussian", terms=tuple(data)[:5])
    chosen = glm.stepwise_aic(base, [], data)
    assert "x1" in chosen.terms


def test_stepwise_never_worse_than_full(rng):
    n = 500
    data = {f"x{j}": rng.normal(size=n) for j in range(6)}
    data["y"] = (rng.uniform(size=n) < 0.4).astype(float)
    full = glm.GlmSpec("binomial", terms=tuple(f"x{j}" for j in range(6)))
    chosen = glm.stepwise_aic(full, [], data)
    assert glm.fit_glm(chosen, data).aic <= glm.fit_glm(full, data).aic + 1e-9


def test_stepwise_adds_single_improving_candidate(rng):
    n = 300
    data = {"x0": rng.normal(size=n), "x1": rng.normal(size=n)}
    data["y"] = data["x0"] + 3 * data["x1"] + rng.normal(scale=0.1, size=n)
    base = glm.GlmSpec("gaussian", terms=("x0",))
    chosen = glm.stepwise_aic(base, ["x1"], data)
    assert chosen.terms == ("x0", "x1")


def test_stepwise_rejects_quasi_family():
    with pytest.raises(ValueError):
        glm.stepwise_aic(glm.GlmSpec("quasibinomial", terms=("x",)), [], {"x": np.ones(3), "y": np.ones(3)})


# -------------------------------------------------------------- simplex nnls

def test_nnls_single_learner():
    np.testing.assert_array_equal(glm.nnls_simplex(np.ones((5, 1)), np.arange(5.0)), [1.0])


def test_nnls_identical_columns_loss(rng):
    z = rng.normal(size=50)
    y = z + rng.normal(scale=0.1, size=50)
    a = glm.nnls_simplex(np.column_stack([z, z]), y)
    assert np.sum((y - np.column_stack([z, z]) @ a) ** 2) == pytest.approx(np.sum((y - z) ** 2), rel=1e-12)


def test_nnls_two_learners_matches_grid(rng):
    n = 200
    y = rng.normal(size=n)
    z1 = y + rng.normal(scale=1.0, size=n)
    z2 = y + rng.normal(scale=1.5, size=n)
    Z = np.column_stack([z1, z2])
    grid = np.linspace(0, 1, 100001)
    losses = [np.sum((y - g * z1 - (1 - g) * z2) ** 2) for g in grid]
    best = grid[int(np.argmin(losses))]
    a = glm.nnls_simplex(Z, y)
    assert abs(a[0] - best) < 1e-4
    assert 0 < a[0] < 1


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_nnls_simplex_properties(K, seed):
    rng = np.random.default_rng(seed)
    n = 40
    y = rng.normal(size=n)
    Z = y[:, None] + rng.normal(scale=rng.uniform(0.2, 2.0, size=K), size=(n, K))
    if seed % 3 == 0:
        Z[:, -1] = Z[:, 0]
    a = glm.nnls_simplex(Z, y)
    assert (a >= 0).all()
    assert abs(a.sum() - 1) <= 1e-12
    loss = np.sum((y - Z @ a) ** 2)
    assert all(loss <= np.sum((y - Z[:, k]) ** 2) + 1e-10 for k in range(K))
    assert glm.kkt_residual(Z, y, a) <= 1e-8 * max(1.0, np.abs(Z.T @ Z).max())
