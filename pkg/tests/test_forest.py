import numpy as np
import pytest

from attkit.errors import DomainError, PredictionError
from attkit.forest import (CausalForestFit, ForestParams, fit_causal_forest,
                           fit_probability_forest, fit_regression_forest,
                           predict)

P300 = ForestParams(trees=300, seed=7)


def test_params_validation():
    with pytest.raises(DomainError):
        ForestParams(trees=0)
    with pytest.raises(DomainError):
        ForestParams(subsample_fraction=0.0)
    with pytest.raises(DomainError):
        ForestParams(min_leaf=0)


def test_constant_outcome_predicts_constant():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(400, 4))
    y = np.full(400, 3.25)
    fit = fit_regression_forest(X, y, P300)
    assert np.all(fit.predict(X[:50]) == 3.25)
    assert np.all(fit.predict_oob() == 3.25)


def test_linear_signal_accuracy():
    rng = np.random.default_rng(1)
    n = 10000
    x = rng.uniform(0, 1, size=(n, 1))
    y = x[:, 0]
    fit = fit_regression_forest(x, y, ForestParams(trees=300, seed=2))
    grid = rng.uniform(0.05, 0.95, size=(500, 1))
    err = np.abs(fit.predict(grid) - grid[:, 0])
    assert err.mean() <= 0.05  # 5% of the unit range


def test_oob_uses_only_out_of_bag_trees():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 3))
    y = rng.normal(size=200)
    fit = fit_regression_forest(X, y, ForestParams(trees=100, seed=3))
    in_sample = fit.predict(X)
    oob = fit.predict_oob()
    assert not np.allclose(in_sample, oob)
    # definitional check via the membership log of a single unit
    m = fit.membership
    assert np.all((m >= 0) & (m <= 2))
    out_trees = np.flatnonzero(m[0] == 0)
    assert 0 < out_trees.size < fit.params.trees


def test_predictions_within_outcome_range():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(600, 3))
    y = rng.uniform(5.0, 9.0, size=600)
    fit = fit_regression_forest(X, y, P300)
    pred = fit.predict(rng.normal(size=(200, 3)))
    assert pred.min() >= 5.0 and pred.max() <= 9.0


def test_empty_query_and_duplicates():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(120, 2))
    y = rng.normal(size=120)
    fit = fit_regression_forest(X, y, ForestParams(trees=60, seed=1))
    assert fit.predict(np.empty((0, 2))).size == 0
    q = np.vstack([X[:1], X[:1]])
    out = fit.predict(q)
    assert out[0] == out[1]


def test_schema_mismatch_rejected():
    rng = np.random.default_rng(5)
    fit = fit_regression_forest(rng.normal(size=(100, 3)), rng.normal(size=100),
                                ForestParams(trees=50, seed=1))
    with pytest.raises(DomainError):
        fit.predict(rng.normal(size=(5, 4)))
    with pytest.raises(DomainError):
        predict(fit, rng.normal(size=(100, 3)), oob=True)  # not the training rows


def test_degenerate_min_leaf_errors():
    with pytest.raises(DomainError, match="min_leaf|rows"):
        fit_regression_forest(np.ones((8, 1)), np.ones(8),
                              ForestParams(trees=10, min_leaf=10))


def test_probability_forest_null_design():
    rng = np.random.default_rng(6)
    n = 5000
    X = rng.normal(size=(n, 3))
    w = (rng.random(n) < 0.3).astype(float)  # independent of X
    fit = fit_probability_forest(X, w, ForestParams(trees=300, seed=9))
    oob = fit.predict_oob()
    assert np.mean((oob >= 0.25) & (oob <= 0.35)) >= 0.95
    assert oob.min() >= 0.0 and oob.max() <= 1.0


def test_probability_forest_separable_signal():
    rng = np.random.default_rng(7)
    n = 4000
    X = rng.normal(size=(n, 2))
    w = (X[:, 0] > 0).astype(float)
    fit = fit_probability_forest(X, w, ForestParams(trees=300, seed=9))
    oob = fit.predict_oob()
    clear = np.abs(X[:, 0]) > 0.2  # away from the boundary
    pos = (w == 1) & clear
    assert np.mean(oob[pos] >= 0.9) >= 0.9


def test_probability_forest_rejects_single_class():
    with pytest.raises(DomainError):
        fit_probability_forest(np.random.default_rng(0).normal(size=(50, 2)),
                               np.ones(50), ForestParams(trees=10))


def test_determinism_across_runs():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(500, 4))
    y = rng.normal(size=500)
    a = fit_regression_forest(X, y, ForestParams(trees=120, seed=5)).predict_oob()
    b = fit_regression_forest(X, y, ForestParams(trees=120, seed=5)).predict_oob()
    assert np.array_equal(a, b)
    c = fit_regression_forest(X, y, ForestParams(trees=120, seed=6)).predict_oob()
    assert not np.array_equal(a, c)


def test_honesty_no_structure_value_overlap():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(300, 3))
    y = rng.normal(size=300)
    fit = fit_regression_forest(X, y, ForestParams(trees=200, seed=4))
    m = fit.membership
    n_struct = fit.subsample - fit.n_honest
    for t in range(m.shape[1]):
        assert np.sum(m[:, t] == 1) == n_struct
        assert np.sum(m[:, t] == 2) == fit.n_honest


def test_honest_leaves_respect_min_leaf():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(400, 2))
    y = X[:, 0] + rng.normal(size=400)
    params = ForestParams(trees=50, min_leaf=7, seed=2)
    fit = fit_regression_forest(X, y, params)
    a = fit._arrays
    for t in range(a.n_trees):
        off = t * a.max_nodes
        nn = int(a.n_nodes[t])
        # walk reachable leaves
        stack = [0]
        while stack:
            node = stack.pop()
            if a.feat[off + node] < 0:
                assert a.cnt[off + node] >= params.min_leaf
            else:
                stack.append(int(a.left[off + node]))
                stack.append(int(a.right[off + node]))


def test_causal_forest_constant_effect():
    rng = np.random.default_rng(11)
    n = 5000
    X = rng.normal(size=(n, 4))
    e = 1 / (1 + np.exp(-0.5 * X[:, 0]))
    w = (rng.random(n) < e).astype(int)
    y = X @ np.array([2.0, 1.0, 0.0, 0.0]) + 10.0 * w + rng.normal(size=n)
    fit = fit_causal_forest(X, w, y, ForestParams(trees=400, seed=12))
    tau, nv = fit.predict(X[:1000])
    assert np.all(nv > 0)
    assert abs(tau.mean() - 10.0) < 1.0


def test_causal_forest_step_effect():
    rng = np.random.default_rng(12)
    n = 6000
    X = rng.normal(size=(n, 3))
    w = (rng.random(n) < 0.5).astype(int)
    tau_true = np.where(X[:, 0] < 0, 0.0, 2000.0)
    y = 1000.0 * X[:, 1] + w * tau_true + 500.0 * rng.standard_normal(n)
    fit = fit_causal_forest(X, w, y, ForestParams(trees=400, seed=13))
    grid_lo = np.column_stack([np.full(200, -1.5), rng.normal(size=(200, 2))])
    grid_hi = np.column_stack([np.full(200, 1.5), rng.normal(size=(200, 2))])
    lo_mean = fit.predict(grid_lo)[0].mean()
    hi_mean = fit.predict(grid_hi)[0].mean()
    assert abs(lo_mean - 0.0) < 250.0
    assert abs(hi_mean - 2000.0) < 250.0


def test_causal_forest_null_effect_se_proxy():
    rng = np.random.default_rng(13)
    n = 4000
    X = rng.normal(size=(n, 3))
    w = (rng.random(n) < 0.5).astype(int)
    y = X[:, 0] + rng.standard_normal(n)
    fit = fit_causal_forest(X, w, y, ForestParams(trees=300, seed=14))
    rows = np.arange(600, dtype=np.int64)
    tau, _ = fit.predict(X[:600], oob_rows=rows)
    se = fit.se_proxy(X[:600], tau, oob_rows=rows)
    assert np.mean(np.abs(tau) <= 2.0 * se) >= 0.9


def test_causal_forest_unified_predict_and_errors():
    rng = np.random.default_rng(14)
    n = 500
    X = rng.normal(size=(n, 2))
    w = (rng.random(n) < 0.5).astype(int)
    y = rng.normal(size=n)
    fit = fit_causal_forest(X, w, y, ForestParams(trees=80, seed=15))
    out = predict(fit, X[:10])
    assert out.shape == (10,)
    with pytest.raises(DomainError):
        fit_causal_forest(X[:10], w[:10], y[:10], ForestParams(trees=10, min_leaf=5))
