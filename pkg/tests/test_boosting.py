import json

import numpy as np
import pytest

from traveltime.boosting import BoostedModel, GbtParams, feature_importance, fit_gbt, predict_gbt
from traveltime.tree import RegressionTree

from oracles import boosting_by_hand

X4 = np.array([[1.0], [2.0], [3.0], [4.0]])
Y4 = np.array([10.0, 20.0, 40.0, 50.0])


def _stumps(**kw):
    base = dict(num_rounds=2, learning_rate=0.5, reg_lambda=0.0, gamma=0.0, max_depth=1,
                split_mode="exact")
    base.update(kw)
    return GbtParams(**base)


def test_two_rounds_by_hand():
    # mean 30; round 1 residuals (-20,-10,10,20): best cut x<=2, weights -15/+15,
    # predictions (22.5,22.5,37.5,37.5), RMSE sqrt(81.25).
    # round 2 residuals (-12.5,-2.5,2.5,12.5): cut x<=2 again, weights -7.5/+7.5,
    # predictions (18.75,18.75,41.25,41.25), RMSE 6.25.
    model = fit_gbt(X4, Y4, params=_stumps())
    assert model.base_score == 30.0
    w1 = model.trees[0].value[model.trees[0].is_leaf]
    w2 = model.trees[1].value[model.trees[1].is_leaf]
    np.testing.assert_allclose(w1, [-15.0, 15.0], atol=1e-9)
    np.testing.assert_allclose(w2, [-7.5, 7.5], atol=1e-9)
    assert model.log[0]["train_rmse"] == pytest.approx(np.sqrt(81.25), abs=1e-9)
    assert model.log[1]["train_rmse"] == pytest.approx(6.25, abs=1e-9)
    np.testing.assert_allclose(model.predict(X4), [18.75, 18.75, 41.25, 41.25], atol=1e-9)


def test_two_rounds_match_recurrence_oracle():
    rng = np.random.default_rng(0)
    x = rng.permutation(12).astype(float)[:, None]
    y = rng.normal(size=12) * 10 + 50
    for lam in (0.0, 2.0):
        model = fit_gbt(x, y, params=_stumps(num_rounds=3, reg_lambda=lam))
        ref = boosting_by_hand(x, y, rounds=3, eta=0.5, lam=lam)
        for tree, step in zip(model.trees, ref):
            assert tree.threshold[0] == step["threshold"]
            np.testing.assert_allclose(tree.value[tree.is_leaf], step["weights"], atol=1e-9)
        np.testing.assert_allclose([r["train_rmse"] for r in model.log], [s["rmse"] for s in ref],
                                   atol=1e-9)


def test_gamma_gate():
    # residuals (-.5,-.5,.5,.5): best gain 0.5 * (0.25/0.5... ) = 0.5 at x<=2
    y = np.array([0.0, 0.0, 1.0, 1.0])
    blocked = fit_gbt(X4, y, params=_stumps(num_rounds=1, gamma=1.0))
    assert blocked.trees[0].n_leaves == 1
    allowed = fit_gbt(X4, y, params=_stumps(num_rounds=1, gamma=0.5))
    assert allowed.trees[0].n_leaves == 2
    assert allowed.trees[0].gain[0] == pytest.approx(0.5)


def test_exact_interpolation_with_deep_tree():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 2))
    y = rng.normal(size=30) * 100 + 400
    model = fit_gbt(X, y, params=GbtParams(num_rounds=1, learning_rate=1.0, reg_lambda=0.0,
                                           max_depth=30, split_mode="exact"))
    assert model.log[0]["train_rmse"] == pytest.approx(0.0, abs=1e-9)


def test_predict_arithmetic_and_zero_trees():
    leaf = RegressionTree([-1], [0.0], [-1], [-1], [100.0], [1], [0.0], [0.0], 1)
    model = BoostedModel(500.0, [leaf], 0.1, 1, [], GbtParams(), 1)
    assert predict_gbt(model, [3.0]) == pytest.approx(510.0)
    empty = BoostedModel(500.0, [], 0.1, 0, [], GbtParams(), 1)
    assert predict_gbt(empty, [3.0]) == 500.0


def test_negative_raw_sum_is_clamped():
    leaf = RegressionTree([-1], [0.0], [-1], [-1], [-1000.0], [1], [0.0], [0.0], 1)
    model = BoostedModel(50.0, [leaf], 1.0, 1, [], GbtParams(), 1)
    assert predict_gbt(model, [0.0]) == 0.0
    assert model.predict_raw([[0.0]])[0] == -950.0


def test_schema_mismatch():
    with pytest.raises(ValueError):
        fit_gbt(X4, Y4, np.zeros((2, 3)), np.zeros(2), params=_stumps())
    model = fit_gbt(X4, Y4, params=_stumps())
    with pytest.raises(ValueError):
        model.predict(np.zeros((1, 2)))


def _noisy(n, seed=2):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 10, size=(n, 3))
    y = 300 + 40 * X[:, 0] + 20 * np.sin(X[:, 1]) + rng.normal(size=n) * 15
    return X, y


def test_training_rmse_nonincreasing():
    X, y = _noisy(500)
    model = fit_gbt(X, y, params=GbtParams(num_rounds=60, max_depth=3, reg_lambda=1.0))
    rmses = [r["train_rmse"] for r in model.log]
    assert all(b <= a + 1e-9 for a, b in zip(rmses, rmses[1:]))


def test_huge_lambda_collapses_to_base_score():
    X, y = _noisy(200)
    model = fit_gbt(X, y, params=GbtParams(num_rounds=20, reg_lambda=1e12))
    np.testing.assert_allclose(model.predict(X), y.mean(), rtol=1e-6)


def test_early_stopping_best_round_is_log_argmin():
    X, y = _noisy(400)
    Xv, yv = _noisy(200, seed=3)
    model = fit_gbt(X, y, Xv, yv, params=GbtParams(num_rounds=400, learning_rate=0.3, max_depth=6,
                                                   early_stopping_patience=10))
    valid = [r["valid_rmse"] for r in model.log]
    assert model.best_round == int(np.argmin(valid)) + 1
    assert len(model.log) < 400 and len(model.log) - model.best_round == 10


def test_growth_limits():
    X, y = _noisy(600)
    deep = fit_gbt(X, y, params=GbtParams(num_rounds=5, max_depth=3))
    assert all(t.depth() <= 3 for t in deep.trees)
    leafy = fit_gbt(X, y, params=GbtParams(num_rounds=5, growth="leafwise", max_leaves=9))
    assert all(t.n_leaves <= 9 for t in leafy.trees)


def test_subsampling_is_seeded():
    X, y = _noisy(300)
    p = GbtParams(num_rounds=10, subsample=0.7, colsample_bytree=0.67, seed=4)
    assert fit_gbt(X, y, params=p).to_json() == fit_gbt(X, y, params=p).to_json()
    q = GbtParams(num_rounds=10, subsample=0.7, colsample_bytree=0.67, seed=5)
    assert fit_gbt(X, y, params=p).to_json() != fit_gbt(X, y, params=q).to_json()


def test_serialization_round_trip():
    X, y = _noisy(200)
    model = fit_gbt(X, y, params=GbtParams(num_rounds=8), feature_names=["a", "b", "c"])
    back = BoostedModel.from_dict(json.loads(model.to_json()))
    np.testing.assert_array_equal(back.predict(X), model.predict(X))
    assert back.to_json() == model.to_json()
    assert model.log_csv().splitlines()[0] == "round,train_rmse,valid_rmse"


def test_importance_constant_model_is_empty():
    X = np.arange(10, dtype=float)[:, None]
    model = fit_gbt(X, np.full(10, 5.0), params=GbtParams(num_rounds=3))
    assert feature_importance(model) == {}


def test_importance_pure_signal_feature():
    rng = np.random.default_rng(7)
    X = rng.uniform(size=(2000, 2))
    y = 600 * X[:, 0] + rng.normal(size=2000) * 5
    model = fit_gbt(X, y, params=GbtParams(num_rounds=40, max_depth=4), feature_names=["A", "B"])
    imp = feature_importance(model)
    assert imp["A"]["gain"] > 10 * imp.get("B", {"gain": 0.0})["gain"]
    assert sum(v["share"] for v in imp.values()) == pytest.approx(1.0, abs=1e-9)
    assert all(v["count"] > 0 for v in imp.values())
