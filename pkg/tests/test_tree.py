import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from traveltime.tree import (
    RegressionTree,
    TreeParams,
    best_split,
    cost_complexity_path,
    fit_tree,
    grow_tree,
    predict_tree,
    prune_ccp,
)

from oracles import best_pruning, enumerate_prunings, greedy_tree_sse, optimal_tree_sse


def test_best_split_two_level_step():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    cand = best_split(X, np.array([0.0, 0.0, 10.0, 10.0]), TreeParams())
    assert cand.feature == 0 and cand.threshold == 2.0
    # all 3 splits enumerated: x<=1 -> 66.67, x<=2 -> 100, x<=3 -> 66.67
    assert cand.gain == pytest.approx(100.0)


def test_best_split_constant_target_has_no_split():
    X = np.arange(6, dtype=float)[:, None]
    assert best_split(X, np.full(6, 7.0), TreeParams()) is None


def test_best_split_min_child_weight_blocks_everything():
    X = np.arange(4, dtype=float)[:, None]
    assert best_split(X, np.array([0, 1, 5, 9.0]), TreeParams(min_child_weight=3)) is None


def test_best_split_tie_prefers_lowest_feature_then_threshold():
    X = np.array([[1, 1], [2, 2], [3, 3], [4, 4.0]])
    cand = best_split(X, np.array([0, 0, 10, 10.0]), TreeParams())
    assert (cand.feature, cand.threshold) == (0, 2.0)
    # symmetric target: x<=1 and x<=3 tie; lowest threshold wins
    cand = best_split(X[:, :1], np.array([10, 0, 0, 10.0]), TreeParams())
    assert cand is None or cand.threshold == 1.0


def test_single_row_is_a_single_leaf():
    tree = fit_tree(np.array([[3.0, 4.0]]), np.array([42.0]))
    assert tree.n_leaves == 1 and predict_tree(tree, [0.0, 0.0]) == 42.0


def test_empty_input_raises():
    with pytest.raises(ValueError):
        fit_tree(np.zeros((0, 2)), np.zeros(0))


def test_max_depth_one_is_a_stump():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 3))
    tree = fit_tree(X, rng.normal(size=50), TreeParams(max_depth=1))
    assert tree.n_leaves <= 2 and tree.depth() <= 1


def test_leaf_mean_and_threshold_goes_left():
    X = np.array([[1.0], [1.0], [5.0], [5.0]])
    tree = fit_tree(X, np.array([10.0, 20.0, 100.0, 100.0]))
    assert predict_tree(tree, [1.0]) == 15.0
    assert tree.threshold[0] == 1.0
    assert predict_tree(tree, [tree.threshold[0]]) == 15.0  # x == threshold -> left


def test_training_rows_predict_their_leaf_group_mean():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, 3))
    y = rng.normal(size=300) * 10 + X[:, 0] * 5
    tree = fit_tree(X, y, TreeParams(max_depth=4, min_child_weight=7))
    leaves = tree.apply(X)
    pred = tree.predict(X)
    for leaf in np.unique(leaves):
        members = leaves == leaf
        assert members.sum() >= 7
        np.testing.assert_allclose(pred[members], y[members].mean(), rtol=1e-12)


def test_figure_one_shape():
    # weekday (Mon=0), hour, temperature. Weekend trips split on 7 am,
    # weekday trips on the freezing point; the counts make weekday the
    # strongest root split.
    counts = {(True, True): 2, (True, False): 1, (False, True): 1, (False, False): 2}
    rows, ys = [], []
    for wd in range(7):
        for hour in (3, 15):
            for temp in (-5.0, 5.0):
                weekend = wd >= 5
                key = (weekend, hour < 7) if weekend else (weekend, temp <= 0)
                value = (25.7 if hour < 7 else 7.8) if weekend else (17.4 if temp <= 0 else 9.2)
                rows += [(wd, hour, temp)] * counts[key]
                ys += [value] * counts[key]
    X, y = np.array(rows, dtype=float), np.array(ys)
    tree = fit_tree(X, y, TreeParams(max_depth=2))
    assert tree.n_leaves == 4
    assert tree.feature[0] == 0 and tree.threshold[0] == 4.0
    left, right = tree.left[0], tree.right[0]
    assert tree.feature[left] == 2 and tree.feature[right] == 1
    assert sorted(np.round(tree.value[tree.is_leaf], 6)) == [7.8, 9.2, 17.4, 25.7]


def test_predict_schema_mismatch():
    tree = fit_tree(np.zeros((3, 2)) + np.arange(3)[:, None], np.arange(3.0))
    with pytest.raises(ValueError):
        tree.predict(np.zeros((1, 3)))


@pytest.mark.parametrize("seed", range(8))
def test_exact_fit_matches_greedy_oracle(seed):
    rng = np.random.default_rng(seed)
    n, p = rng.integers(5, 60), rng.integers(1, 4)
    X = np.round(rng.normal(size=(n, p)), 1)
    y = rng.normal(size=n) * 3
    depth, mcw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    tree = fit_tree(X, y, TreeParams(max_depth=depth, min_child_weight=mcw))
    expected = greedy_tree_sse(X, y, depth, mcw)
    assert abs(tree.leaf_sse() - expected) <= 1e-9 * max(1.0, expected)
    assert optimal_tree_sse(X, y, min(depth, 2), mcw) <= expected + 1e-9 or depth > 2


def test_histogram_with_enough_bins_equals_exact():
    rng = np.random.default_rng(3)
    X = np.round(rng.normal(size=(120, 3)), 2)
    y = rng.normal(size=120)
    a = fit_tree(X, y, TreeParams(max_depth=5, min_child_weight=2))
    b = fit_tree(X, y, TreeParams(max_depth=5, min_child_weight=2, split_mode="histogram",
                                  histogram_bins=120))
    assert a.to_json() == b.to_json()


def test_histogram_with_few_bins_restricts_thresholds():
    X = np.arange(100, dtype=float)[:, None]
    y = (X[:, 0] > 36.5).astype(float)
    cand = best_split(X, y, TreeParams(split_mode="histogram", histogram_bins=4))
    assert cand.threshold in (24.0, 49.0, 74.0)


def test_training_sse_nonincreasing_in_depth():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(200, 3))
    y = np.sin(X[:, 0] * 2) + rng.normal(size=200) * 0.2
    sses = [fit_tree(X, y, TreeParams(max_depth=d, min_child_weight=3)).leaf_sse() for d in range(1, 9)]
    assert all(b <= a + 1e-9 for a, b in zip(sses, sses[1:]))


def test_serialization_round_trip():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(80, 2))
    tree = fit_tree(X, rng.normal(size=80), TreeParams(max_depth=4))
    back = RegressionTree.from_json(tree.to_json())
    np.testing.assert_array_equal(back.predict(X), tree.predict(X))
    np.testing.assert_allclose(back.value, tree.value, atol=1e-12, rtol=0)
    blob = json.loads(tree.to_json())
    assert blob["version"] == 1 and blob["format"] == "regression_tree"


def test_leafwise_respects_max_leaves():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(200, 3))
    for L in (2, 5, 13):
        tree = grow_tree(X, rng.normal(size=200), growth="leafwise", max_leaves=L)
        assert tree.n_leaves == L


# --- cost-complexity pruning ------------------------------------------------

def _toy_tree(seed, max_leaves):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 2))
    y = rng.normal(size=40) * 5 + 3 * (X[:, 0] > 0)
    return grow_tree(X, y, growth="leafwise", max_leaves=max_leaves)


def test_prune_alpha_zero_keeps_tree():
    tree = _toy_tree(0, 7)
    assert prune_ccp(tree, 0.0).to_json() == tree.to_json()


def test_prune_large_alpha_gives_root():
    tree = _toy_tree(1, 7)
    pruned = prune_ccp(tree, tree.sse[0] + 1.0)
    assert pruned.n_leaves == 1 and pruned.value[0] == tree.value[0]


def test_prune_negative_alpha_raises():
    with pytest.raises(ValueError):
        prune_ccp(_toy_tree(0, 3), -1.0)


def test_three_leaf_tree_collapses_at_oracle_alpha():
    tree = _toy_tree(2, 3)
    assert tree.n_leaves == 3
    # crossing alphas from the three enumerated subtrees
    cost = {n_leaves: s for s, n_leaves, _ in enumerate_prunings(tree)}
    to_two = cost[2] - cost[3]
    to_one = cost[1] - cost[2]
    assert to_one > to_two  # the 2-leaf subtree is on the nested sequence
    assert prune_ccp(tree, to_two * (1 - 1e-9)).n_leaves == 3
    assert prune_ccp(tree, to_two * (1 + 1e-9)).n_leaves == 2
    assert prune_ccp(tree, to_one * (1 - 1e-9)).n_leaves == 2
    assert prune_ccp(tree, to_one * (1 + 1e-9)).n_leaves == 1
    assert best_pruning(tree, to_two * (1 + 1e-9))[1] == 2


@pytest.mark.parametrize("seed", range(5))
def test_prune_matches_subtree_enumeration(seed):
    tree = _toy_tree(seed + 10, 7)
    for alpha in np.random.default_rng(seed).uniform(0, tree.sse[0], size=5):
        best_cost, best_leaves, kept = best_pruning(tree, alpha)
        pruned = prune_ccp(tree, alpha)
        assert pruned.n_leaves == best_leaves
        assert pruned.leaf_sse() + alpha * pruned.n_leaves == pytest.approx(best_cost + alpha * best_leaves, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.floats(0, 500), min_size=2, max_size=6))
def test_leaf_count_nonincreasing_in_alpha(seed, alphas):
    tree = _toy_tree(seed, 7)
    counts = [prune_ccp(tree, a).n_leaves for a in sorted(alphas)]
    assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_path_is_monotone():
    path = cost_complexity_path(_toy_tree(3, 7))
    alphas = [a for a, _ in path]
    leaves = [n for _, n in path]
    assert alphas == sorted(alphas) and leaves == sorted(leaves, reverse=True) and leaves[-1] == 1
