import json

import numpy as np
import pytest

from tempmeta.meta import (
    DivergenceError,
    MetaDataset,
    SchemaError,
    fit_gb,
    fit_lasso,
    fit_meta,
    fit_nn,
    kkt_residual,
    lambda_max,
    loss_and_grads,
    predict,
    run_protocol,
    solve_lasso,
    split_sizes,
)
from tempmeta.meta.lasso import LinearModel
from tempmeta.meta.models import MetaModel
from tempmeta.meta.nn import init_params


def _standardised(rng, n, p):
    X = rng.normal(size=(n, p))
    return (X - X.mean(0)) / X.std(0)


# ---------------------------------------------------------------- LASSO


@pytest.mark.parametrize("task", ["reg", "clf"])
def test_lasso_null_model_at_lambda_max(task):
    rng = np.random.default_rng(0)
    X = _standardised(rng, 100, 5)
    y = X[:, 0] + rng.normal(size=100) if task == "reg" else (X[:, 0] > 0).astype(float)
    lm = lambda_max(X, y, task)
    # direct oracle: gradient of the loss at w = 0 with the optimal intercept
    ybar = y.mean()
    assert lm == pytest.approx(np.max(np.abs(X.T @ (y - ybar))) / 100, rel=1e-12)
    for lam in (lm, 1.5 * lm):
        m = solve_lasso(X, y, lam, task)
        assert np.all(m.weights == 0)
    m = solve_lasso(X, y, 0.9 * lm, task)
    assert np.any(m.weights != 0)


def test_lasso_zero_penalty_single_feature_matches_ols():
    rng = np.random.default_rng(1)
    x = rng.normal(size=200)
    y = 0.3 + 1.7 * x + 0.2 * rng.normal(size=200)
    z = ((x - x.mean()) / x.std())[:, None]
    m = solve_lasso(z, y, 0.0, "reg")
    slope = np.sum((z[:, 0] - z.mean()) * (y - y.mean())) / np.sum((z[:, 0] - z.mean()) ** 2)
    assert m.weights[0] == pytest.approx(slope, abs=1e-8)
    assert m.bias == pytest.approx(y.mean(), abs=1e-8)


def test_lasso_orthonormal_design_soft_threshold():
    rng = np.random.default_rng(2)
    n, p = 120, 6
    Q, _ = np.linalg.qr(rng.normal(size=(n, p + 1)))
    # orthogonal to the constant column, scaled so that X^T X / n = I
    c = np.ones(n) / np.sqrt(n)
    Q = Q - np.outer(c, c @ Q)
    Q, _ = np.linalg.qr(Q[:, :p])
    X = Q * np.sqrt(n)
    y = X @ np.array([2.0, -1.0, 0.5, 0.05, 0.0, -3.0]) + rng.normal(size=n)
    for lam in (0.01, 0.3, 1.2):
        m = solve_lasso(X, y, lam, "reg")
        expect = np.sign(X.T @ y / n) * np.maximum(np.abs(X.T @ y / n) - lam, 0)
        assert np.max(np.abs(m.weights - expect)) < 1e-6
        assert m.converged and m.kkt < 1e-6


@pytest.mark.parametrize("task", ["reg", "clf"])
def test_lasso_kkt_on_correlated_data(task):
    rng = np.random.default_rng(3)
    X = rng.normal(size=(300, 8))
    X[:, 1] = X[:, 0] + 0.1 * rng.normal(size=300)
    X = (X - X.mean(0)) / X.std(0)
    eta = X @ np.array([1.0, 0.5, 0, 0, -0.7, 0, 0, 0.2])
    y = eta + rng.normal(size=300) if task == "reg" else (rng.random(300) < 1 / (1 + np.exp(-eta))).astype(float)
    for lam in (1e-3, 0.05):
        m = solve_lasso(X, y, lam, task)
        assert m.converged
        assert kkt_residual(X, y, m.weights, m.bias, lam, task) < 1e-6


def test_lasso_grid_selection_and_logit():
    rng = np.random.default_rng(4)
    X = _standardised(rng, 400, 4)
    y = (X[:, 0] + 0.3 * rng.normal(size=400) > 0).astype(float)
    m = fit_lasso(X[:300], y[:300], X[300:], y[300:], "clf")
    assert 1e-5 <= m.lam <= 10 and m.weights[0] > 0
    zero = LinearModel(np.array([1.0, -2.0]), 0.0, 0.0, "clf")
    mm = MetaModel("lr_l1", "clf", ("a_0", "b_0"), np.zeros(2), np.ones(2), zero)
    assert predict(mm, np.array([[2.0, 1.0]]))[0] == 0.5
    const = MetaModel("lr_l1", "reg", ("a_0",), np.zeros(1), np.ones(1), LinearModel(np.zeros(1), 0.42, 1.0, "reg"))
    assert np.all(predict(const, np.array([[1.0], [-7.0]])) == 0.42)


# ------------------------------------------------------------------- GB


def test_gb_zero_rounds_is_constant():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(50, 3))
    y = rng.random(50)
    m = fit_gb(X, y, n_rounds=0)
    assert np.all(m.decision_function(X) == y.mean())
    yc = (y > 0.3).astype(float)
    m = fit_gb(X, yc, task="clf", n_rounds=0)
    assert m.decision_function(X[:1])[0] == pytest.approx(np.log(yc.mean() / (1 - yc.mean())))


def test_gb_fits_step_exactly():
    # 20 points per side: mean and residuals are exact in binary floating point
    x = np.linspace(-1, 1, 40)[:, None]
    y = np.where(x[:, 0] > 0, 1.0, 0.0)
    m = fit_gb(x, y, learning_rate=1.0, n_rounds=1)
    assert np.mean((m.decision_function(x) - y) ** 2) == 0.0
    # the default rate gets there geometrically and each round helps
    m = fit_gb(x, y, n_rounds=300)
    assert np.all(np.diff(m.train_loss) <= 0)
    assert m.train_loss[-1] < 1e-12


def test_gb_loss_monotone_and_depth():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(300, 4))
    y = np.sin(2 * X[:, 0]) + X[:, 1] * X[:, 2] + 0.1 * rng.normal(size=300)
    m = fit_gb(X[:200], y[:200], X[200:], y[200:], n_rounds=150)
    assert all(t.depth <= 3 for t in m.trees)
    full = fit_gb(X[:200], y[:200], n_rounds=150)
    assert np.all(np.diff(full.train_loss) <= 1e-15)
    # early stopping keeps exactly the validation argmin
    assert len(m.trees) == int(np.argmin(m.val_loss))
    assert len(m.val_loss) - 1 <= m.best_round + 20


def test_gb_invariant_to_monotone_rescaling():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(200, 3))
    y = (X[:, 0] + X[:, 1] ** 2 > 0.5).astype(float)
    m1 = fit_gb(X, y, task="clf", n_rounds=30)
    m2 = fit_gb(X * np.array([3.0, 0.5, 10.0]) + 4.0, y, task="clf", n_rounds=30)
    assert np.allclose(m1.decision_function(X), m2.decision_function(X * np.array([3.0, 0.5, 10.0]) + 4.0))


# ------------------------------------------------------------------- NN


def test_nn_gradient_check():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(64, 6))
    for task, y in (("reg", rng.random(64)), ("clf", (rng.random(64) > 0.5).astype(float))):
        params = init_params(6, y, task, rng)
        _, grads = loss_and_grads(params, X, y, task)
        h = 1e-6
        picks = [("W1", (rng.integers(6), rng.integers(50))) for _ in range(3)] + [("w2", (rng.integers(50),)), ("b2", ())]
        for name, idx in picks:
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            fd = (loss_and_grads(plus, X, y, task)[0] - loss_and_grads(minus, X, y, task)[0]) / (2 * h)
            an = grads[name][idx]
            assert abs(fd - an) / max(abs(fd), abs(an), 1e-8) < 1e-4


def test_nn_zero_weights_and_determinism():
    rng = np.random.default_rng(9)
    X = _standardised(rng, 200, 4)
    y = np.clip(0.5 + 0.2 * X[:, 0], 0, 1)
    m1 = fit_nn(X[:150], y[:150], X[150:], y[150:], "reg", seed=3, max_epochs=40)
    m2 = fit_nn(X[:150], y[:150], X[150:], y[150:], "reg", seed=3, max_epochs=40)
    assert np.array_equal(m1.W1, m2.W1) and np.array_equal(m1.w2, m2.w2) and m1.b2 == m2.b2
    m1.W1[:] = 0
    m1.w2[:] = 0
    m1.b1[:] = 0
    assert np.all(m1.decision_function(X) == m1.b2)


def test_nn_divergence_reported():
    rng = np.random.default_rng(14)
    X = _standardised(rng, 100, 3) * 1e3
    y = rng.random(100) * 1e3
    with pytest.raises(DivergenceError):
        fit_nn(X, y, X, y, "reg", lr=1e9, max_halvings=2, max_epochs=3)


def test_nn_learns_simple_target():
    rng = np.random.default_rng(10)
    X = _standardised(rng, 600, 3)
    y = (X[:, 0] - X[:, 1] > 0).astype(float)
    m = fit_nn(X[:500], y[:500], X[500:], y[500:], "clf", seed=0)
    acc = np.mean((m.decision_function(X[500:]) > 0) == (y[500:] > 0.5))
    assert acc > 0.9


# ------------------------------------------------------------- protocol


def _dataset(n, rng, linear=False):
    a = rng.random(n)
    if not linear:
        # threshold feature with a clear margin around 0.5
        a = np.where(a > 0.5, 0.6 + 0.4 * a, 0.4 * a)
    b = rng.normal(size=n)
    X = np.column_stack([a, b, rng.normal(size=n)])
    iou = np.clip(0.2 + 0.6 * a + 0.05 * b, 0, 1) if linear else np.where(a > 0.5, 0.8, 0.2)
    keys = [("s", i // 4, i % 4 + 1, 1) for i in range(n)]
    return MetaDataset(X, ["a_0", "b_0", "c_0"], iou, keys)


@pytest.mark.parametrize("family", ["lr_l1", "gb", "nn_l2"])
def test_protocol_separable_all_families(family):
    rng = np.random.default_rng(11)
    base = _dataset(60, rng)
    ds = base.concat(base).concat(base)
    rep = run_protocol(ds, family, "clf", runs=10, seed=1)
    assert len(rep["runs"]) == 10
    assert rep["summary"]["test_acc"] == {"mean": 1.0, "std": 0.0}


def test_protocol_linear_regression_and_sizes():
    rng = np.random.default_rng(12)
    ds = _dataset(333, rng, linear=True)
    rep = run_protocol(ds, "lr_l1", "reg", runs=10, seed=0)
    assert rep["summary"]["test_r2"]["mean"] > 0.999
    assert "std" in rep["summary"]["test_sigma"]
    for r in rep["runs"]:
        assert abs(r["n_train"] - 0.7 * 333) <= 1 and abs(r["n_val"] - 0.1 * 333) <= 1 and abs(r["n_test"] - 0.2 * 333) <= 1
        assert r["n_train"] + r["n_val"] + r["n_test"] == 333
    again = run_protocol(ds, "lr_l1", "reg", runs=10, seed=0)
    assert json.dumps(again, sort_keys=True) == json.dumps(rep, sort_keys=True)
    assert split_sizes(100) == (70, 10, 20)


def test_protocol_group_split_and_errors():
    rng = np.random.default_rng(13)
    ds = _dataset(200, rng)
    rep = run_protocol(ds, "gb", "clf", runs=3, seed=0, group_split=True)
    assert len(rep["runs"]) == 3
    with pytest.raises(Exception, match="at least 50"):
        run_protocol(ds.take(range(20)), "gb", "clf")
    single = MetaDataset(ds.X, ds.feature_names, np.full(len(ds), 0.9), ds.keys)
    with pytest.raises(Exception, match="both classes"):
        run_protocol(single, "gb", "clf", runs=1)


def test_dataset_select_and_schema():
    names = ["s_0", "S_0", "s_1", "S_1", "present_0", "present_1"]
    X = np.arange(12, dtype=float).reshape(2, 6)
    ds = MetaDataset(X, names, [0.1, 0.9], [("q", 1, 1, 1), ("q", 1, 2, 1)])
    assert ds.select(["s"], 0).feature_names == ("s_0",)
    assert ds.select(["s"], 1).feature_names == ("s_0", "s_1", "present_1")
    assert ds.label.tolist() == [0, 1]
    with pytest.raises(ValueError, match="non-finite"):
        MetaDataset(np.array([[np.nan]]), ["a_0"], [0.5], [("q", 1, 1, 1)])
    m = fit_meta("gb", "reg", ds.select(["s"], 0), ds.select(["s"], 0))
    with pytest.raises(SchemaError, match="s_0"):
        predict(m, [{"S_0": 1.0}])
    rt = MetaModel.from_dict(json.loads(json.dumps(m.to_dict())))
    assert np.array_equal(predict(rt, ds.select(["s"], 0)), predict(m, ds.select(["s"], 0)))
