import json

import numpy as np
import pytest

from traveltime.forest import BaggedEnsemble, ForestParams, fit_forest, predict_ensemble
from traveltime.tree import RegressionTree, TreeParams, fit_tree, predict_tree


def _data(n=300, p=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 10, size=(n, p))
    y = 100 + 30 * X[:, 0] - 10 * X[:, 1] + rng.normal(size=n) * 20
    return X, y


def _const_tree(value, n_features=1):
    return RegressionTree([-1], [0.0], [-1], [-1], [value], [1], [0.0], [0.0], n_features)


def test_single_full_sample_tree_is_cart():
    X, y = _data()
    params = ForestParams(n_trees=1, subsample=1.0, colsample_bytree=1.0, bootstrap=False,
                          max_depth=5, min_child_weight=3)
    forest = fit_forest(X, y, params)
    cart = fit_tree(X, y, TreeParams(max_depth=5, min_child_weight=3))
    np.testing.assert_array_equal(forest.predict(X), cart.predict(X))


def test_average_of_stumps():
    ens = BaggedEnsemble([_const_tree(v) for v in (10.0, 20.0, 30.0)], [[0]] * 3, ForestParams(), 1)
    assert predict_ensemble(ens, [1.0]) == 20.0
    pair = BaggedEnsemble([_const_tree(100.0), _const_tree(200.0)], [[0]] * 2, ForestParams(), 1)
    assert predict_ensemble(pair, [0.0]) == 150.0


def test_constant_trees_predict_constant():
    ens = BaggedEnsemble([_const_tree(7.5)] * 4, [[0]] * 4, ForestParams(), 1)
    np.testing.assert_array_equal(ens.predict(np.arange(5.0)[:, None]), 7.5)


@pytest.mark.parametrize("kind", ["random_forest", "extra_trees"])
def test_prediction_is_mean_of_trees(kind):
    X, y = _data()
    forest = fit_forest(X, y, ForestParams(kind=kind, n_trees=7, colsample_bytree=0.75, seed=3))
    manual = np.mean([[predict_tree(t, x) for t in forest.trees] for x in X[:20]], axis=1)
    np.testing.assert_allclose(forest.predict(X[:20]), manual, rtol=1e-12)


@pytest.mark.parametrize("kind", ["random_forest", "extra_trees"])
def test_fixed_seed_is_deterministic(kind):
    X, y = _data()
    p = ForestParams(kind=kind, n_trees=5, subsample=0.8, colsample_bytree=0.5, seed=11)
    assert fit_forest(X, y, p).to_json() == fit_forest(X, y, p).to_json()


def test_round_trip():
    X, y = _data()
    forest = fit_forest(X, y, ForestParams(n_trees=3), feature_names=["a", "b", "c", "d"])
    back = BaggedEnsemble.from_dict(json.loads(forest.to_json()))
    np.testing.assert_array_equal(back.predict(X), forest.predict(X))
    assert back.to_json() == forest.to_json()


def test_tampered_schema_hash_rejected():
    X, y = _data()
    blob = json.loads(fit_forest(X, y, ForestParams(n_trees=1), feature_names=list("abcd")).to_json())
    blob["feature_names"] = list("abce")
    with pytest.raises(ValueError):
        BaggedEnsemble.from_dict(blob)


def test_schema_mismatch_and_empty():
    X, y = _data()
    forest = fit_forest(X, y, ForestParams(n_trees=2))
    with pytest.raises(ValueError):
        forest.predict(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        fit_forest(np.zeros((0, 2)), np.zeros(0), ForestParams())


def test_extra_trees_thresholds_inside_node_range():
    X, y = _data(n=200)
    forest = fit_forest(X, y, ForestParams(kind="extra_trees", n_trees=6, max_depth=6,
                                           min_child_weight=2, seed=5))
    for tree in forest.trees:
        # walk every internal node with the rows that reach it
        stack = [(0, np.arange(len(X)))]
        while stack:
            node, rows = stack.pop()
            f = tree.feature[node]
            if f < 0:
                continue
            vals = X[rows, f]
            assert vals.min() < tree.threshold[node] < vals.max()
            left = vals <= tree.threshold[node]
            stack += [(tree.left[node], rows[left]), (tree.right[node], rows[~left])]


def test_feature_subsets_vary():
    X, y = _data(p=5)
    forest = fit_forest(X, y, ForestParams(n_trees=8, colsample_bytree=0.6, seed=0))
    assert all(len(s) == 3 for s in forest.feature_subsets)
    assert len({tuple(s) for s in forest.feature_subsets}) >= 2
    for subset, tree in zip(forest.feature_subsets, forest.trees):
        assert set(tree.feature[tree.feature >= 0]) <= set(subset)


def test_bootstrap_sizes():
    from traveltime.forest import _tree_rows

    rng = np.random.default_rng(0)
    assert len(_tree_rows(ForestParams(subsample=0.9), 1000, rng)) == 900
    assert len(_tree_rows(ForestParams(strict_632=True), 1000, rng)) == 632
    assert _tree_rows(ForestParams(bootstrap=False), 1000, rng) is None
    rows = _tree_rows(ForestParams(bootstrap=False, subsample=0.5), 1000, rng)
    assert len(np.unique(rows)) == 500
    assert _tree_rows(ForestParams(kind="extra_trees"), 1000, rng) is None
