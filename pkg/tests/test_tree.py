"""Tree fitting against a brute-force split oracle, exports, outcome tallies."""

import json
import math

import numpy as np
import pytest

from clinpol.tree import (
    DecisionTree,
    TreeError,
    TreeHyperparams,
    attach_outcomes,
    export_tree,
    fit_tree,
    tree_from_json,
    tree_to_json,
)

# ---------------------------------------------------------------------------
# oracle: exhaustive Gini split search, written independently of the library
# ---------------------------------------------------------------------------

def oracle_gini(labels, n_classes):
    n = len(labels)
    g = 1.0
    for c in range(n_classes):
        p = sum(1 for v in labels if v == c) / n
        g -= p * p
    return g


def oracle_best_split(X, y, n_classes, floor):
    """Try every feature and every midpoint between consecutive distinct values."""
    n, d = X.shape
    best = None
    for j in range(d):
        vals = sorted(set(X[:, j]))
        for a, b in zip(vals[:-1], vals[1:]):
            thr = (a + b) / 2.0
            left = [y[i] for i in range(n) if X[i, j] <= thr]
            right = [y[i] for i in range(n) if X[i, j] > thr]
            if len(left) < floor or len(right) < floor:
                continue
            w = (len(left) * oracle_gini(left, n_classes)
                 + len(right) * oracle_gini(right, n_classes)) / n
            if best is None or w < best[2] - 1e-15:
                best = (j, thr, w)
            elif best is not None and abs(w - best[2]) <= 1e-15:
                # keep lowest feature index, then lowest threshold
                if (j, thr) < (best[0], best[1]):
                    best = (j, thr, w)
    return best


def collect_internal_nodes(tree, X):
    """Yield (node, row_indices_reaching_node) pairs for every internal node."""
    out = []

    def walk(node, idx):
        if node.is_leaf:
            return
        out.append((node, idx))
        mask = X[idx, node.feature] <= node.threshold
        walk(node.left, idx[mask])
        walk(node.right, idx[~mask])

    walk(tree.root, np.arange(len(X)))
    return out


def assert_tree_matches_oracle(X, y, hp, n_classes):
    """Every internal node's split must be impurity-optimal per the oracle."""
    tree = fit_tree(X, y, hp, n_classes=n_classes)
    floor = math.ceil(hp.min_leaf_fraction * len(X))
    for node, idx in collect_internal_nodes(tree, X):
        got = oracle_best_split(X[idx], y[idx], n_classes, floor)
        assert got is not None
        j, thr, w = got
        # impurity of the library's chosen split, recomputed the oracle's way
        left = [y[i] for i in idx if X[i, node.feature] <= node.threshold]
        right = [y[i] for i in idx if X[i, node.feature] > node.threshold]
        w_chosen = (len(left) * oracle_gini(left, n_classes)
                    + len(right) * oracle_gini(right, n_classes)) / len(idx)
        assert abs(w_chosen - w) <= 1e-12
    return tree


# ---------------------------------------------------------------------------
# fitting basics
# ---------------------------------------------------------------------------

def test_pure_labels_give_single_leaf():
    X = np.array([[0.0], [1.0], [2.0]])
    tree = fit_tree(X, [1, 1, 1], TreeHyperparams(max_depth=4), n_classes=3)
    assert tree.n_leaves == 1
    assert tree.root.is_leaf
    np.testing.assert_array_equal(tree.predict_proba([5.0]), [0.0, 1.0, 0.0])


def test_separable_1d_split_lands_between_classes():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = [0, 0, 1, 1]
    tree = fit_tree(X, y, TreeHyperparams(max_depth=3, min_leaf_fraction=0.01))
    assert not tree.root.is_leaf
    assert 1.0 < tree.root.threshold < 2.0
    assert tree.root.threshold == 1.5
    np.testing.assert_array_equal(tree.predict_proba([0.2]), [1.0, 0.0])
    np.testing.assert_array_equal(tree.predict_proba([2.9]), [0.0, 1.0])


def test_root_split_matches_exhaustive_oracle():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(200, 5))
    y = (X[:, 2] + 0.3 * rng.normal(size=200) > 0).astype(int)
    hp = TreeHyperparams(max_depth=1, min_leaf_fraction=0.05)
    tree = fit_tree(X, y, hp)
    floor = math.ceil(0.05 * 200)
    j, thr, w = oracle_best_split(X, np.asarray(y), 2, floor)
    assert tree.root.feature == j
    assert tree.root.threshold == pytest.approx(thr, abs=0.0)
    left = [y[i] for i in range(200) if X[i, tree.root.feature] <= tree.root.threshold]
    right = [y[i] for i in range(200) if X[i, tree.root.feature] > tree.root.threshold]
    w_chosen = (len(left) * oracle_gini(left, 2) + len(right) * oracle_gini(right, 2)) / 200
    assert abs(w_chosen - w) <= 1e-12


def test_every_internal_split_matches_oracle_small_sweep():
    rng = np.random.default_rng(5)
    for trial in range(10):
        n = int(rng.integers(30, 120))
        d = int(rng.integers(1, 5))
        C = int(rng.integers(2, 4))
        X = np.round(rng.normal(size=(n, d)), 2)
        y = rng.integers(0, C, size=n)
        hp = TreeHyperparams(max_depth=int(rng.integers(1, 4)),
                             min_leaf_fraction=float(rng.choice([0.02, 0.05, 0.1])))
        assert_tree_matches_oracle(X, y, hp, C)


def test_split_tie_breaks_lowest_feature_index():
    # two identical columns: feature 0 must win the tie
    X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    y = [0, 0, 1, 1]
    tree = fit_tree(X, y, TreeHyperparams(max_depth=1, min_leaf_fraction=0.01))
    assert tree.root.feature == 0


def test_min_leaf_floor_is_respected():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(157, 3))
    y = rng.integers(0, 3, size=157)
    for frac in (0.02, 0.1, 0.25):
        hp = TreeHyperparams(max_depth=8, min_leaf_fraction=frac)
        tree = fit_tree(X, y, hp)
        floor = math.ceil(frac * 157)
        assert all(lf.n >= floor for lf in tree.leaves)


def test_depth_cap_is_respected():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(400, 4))
    y = rng.integers(0, 2, size=400)
    for depth in (1, 2, 5):
        tree = fit_tree(X, y, TreeHyperparams(max_depth=depth, min_leaf_fraction=0.01))
        assert tree.depth() <= depth


def test_single_sample_fits_single_leaf():
    tree = fit_tree(np.array([[1.0]]), [0], TreeHyperparams(), n_classes=2)
    assert tree.n_leaves == 1
    np.testing.assert_array_equal(tree.predict_proba([1.0]), [1.0, 0.0])


def test_fit_rejects_empty_and_misaligned_input():
    with pytest.raises(TreeError, match="zero samples"):
        fit_tree(np.empty((0, 2)), [], TreeHyperparams())
    with pytest.raises(TreeError, match="disagree"):
        fit_tree(np.ones((3, 2)), [0, 1], TreeHyperparams())
    with pytest.raises(TreeError, match="outside"):
        fit_tree(np.ones((2, 1)), [0, 5], TreeHyperparams(), n_classes=2)


def test_hyperparams_validate_ranges():
    with pytest.raises(TreeError):
        TreeHyperparams(max_depth=0)
    with pytest.raises(TreeError):
        TreeHyperparams(min_leaf_fraction=0.0)
    with pytest.raises(TreeError):
        TreeHyperparams(min_leaf_fraction=0.5)


# ---------------------------------------------------------------------------
# leaf queries
# ---------------------------------------------------------------------------

def test_predict_proba_is_leaf_frequency():
    X = np.array([[0.0], [1.0], [2.0]])
    y = [0, 0, 1]
    # floor of 2 forbids any split, so the root leaf holds counts [2, 1]
    tree = fit_tree(X, y, TreeHyperparams(max_depth=4, min_leaf_fraction=0.45))
    assert tree.n_leaves == 1
    probs = tree.predict_proba([0.1])
    np.testing.assert_allclose(probs, [2 / 3, 1 / 3], atol=1e-12)


def test_predict_proba_rows_sum_to_one():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(500, 4))
    y = rng.integers(0, 5, size=500)
    tree = fit_tree(X, y, TreeHyperparams(max_depth=6, min_leaf_fraction=0.01), n_classes=5)
    P = tree.predict_proba_batch(rng.normal(size=(10_000, 4)))
    assert np.all(np.abs(P.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all(P >= 0.0)


def test_dimension_mismatch_raises():
    tree = fit_tree(np.ones((4, 2)), [0, 0, 1, 1], TreeHyperparams())
    with pytest.raises(TreeError, match="2 columns"):
        tree.predict_proba([1.0, 2.0, 3.0])


def test_leaf_index_matches_training_tally():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(300, 3))
    y = rng.integers(0, 3, size=300)
    tree = fit_tree(X, y, TreeHyperparams(max_depth=4, min_leaf_fraction=0.05))
    ids = tree.leaf_index_batch(X)
    for lf in tree.leaves:
        got = np.bincount(y[ids == lf.leaf_id], minlength=3)
        np.testing.assert_array_equal(got, lf.counts.astype(int))
        assert (ids == lf.leaf_id).sum() == lf.n
    # leaf ids are stable across refits of identical input
    ids2 = fit_tree(X, y, TreeHyperparams(max_depth=4, min_leaf_fraction=0.05)
                    ).leaf_index_batch(X)
    np.testing.assert_array_equal(ids, ids2)


def test_single_leaf_tree_maps_everything_to_leaf_zero():
    tree = fit_tree(np.array([[0.0], [1.0]]), [1, 1], TreeHyperparams(), n_classes=2)
    assert tree.leaf_index([123.0]) == 0


# ---------------------------------------------------------------------------
# outcome attachment
# ---------------------------------------------------------------------------

def test_attach_outcomes_means_and_no_data():
    X = np.array([[0.0], [0.1], [0.2]])
    y_fit = [0, 0, 1]
    tree = fit_tree(X, y_fit, TreeHyperparams(max_depth=1, min_leaf_fraction=0.45),
                    n_classes=3)
    # single leaf: action 0 outcomes {2, 4}, action 1 outcome {1}, action 2 never seen
    out = attach_outcomes(tree, X, [0, 0, 1], [2.0, 4.0, 1.0])
    avg = out.outcome_avg_batch(X[:1])[0]
    assert avg[0] == 3.0
    assert avg[1] == 1.0
    assert math.isnan(avg[2])
    # original tree untouched
    assert not tree.has_outcomes


def test_attach_outcomes_matches_group_by_oracle():
    rng = np.random.default_rng(23)
    X = rng.normal(size=(400, 3))
    y = rng.integers(0, 4, size=400)
    outcomes = rng.normal(size=400)
    tree = fit_tree(X, y, TreeHyperparams(max_depth=3, min_leaf_fraction=0.02), n_classes=4)
    fitted = attach_outcomes(tree, X, y, outcomes)
    ids = fitted.leaf_index_batch(X)
    avg = fitted.outcome_avg_batch(X)
    for i in range(400):
        group = outcomes[(ids == ids[i]) & (y == y[i])]
        assert avg[i, y[i]] == pytest.approx(group.mean(), abs=1e-12)


def test_attach_outcomes_rejects_misaligned_arrays():
    tree = fit_tree(np.ones((2, 1)), [0, 1], TreeHyperparams())
    with pytest.raises(TreeError, match="misaligned"):
        attach_outcomes(tree, np.ones((2, 1)), [0, 1], [1.0])


# ---------------------------------------------------------------------------
# export / import
# ---------------------------------------------------------------------------

def test_single_leaf_dot_export():
    tree = fit_tree(np.array([[0.0]]), [0], TreeHyperparams(), n_classes=2)
    dot = export_tree(tree, "dot")
    assert dot.count("[label=") == 1
    assert "->" not in dot


def test_depth_two_dot_structure():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 2))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(int)
    tree = fit_tree(X, y, TreeHyperparams(max_depth=2, min_leaf_fraction=0.01),
                    feature_names=["left_col", "right_col"])
    dot = export_tree(tree, "dot")
    assert "<=" in dot
    assert "left_col" in dot or "right_col" in dot
    lines = dot.splitlines()
    n_nodes = sum(1 for l in lines if "[label=" in l and "->" not in l)
    n_edges = sum(1 for l in lines if "->" in l)
    assert n_edges == n_nodes - 1


def test_json_round_trip_identical_predictions():
    rng = np.random.default_rng(17)
    X = rng.normal(size=(500, 4))
    y = rng.integers(0, 3, size=500)
    outcomes = rng.normal(size=500)
    tree = attach_outcomes(
        fit_tree(X, y, TreeHyperparams(max_depth=5, min_leaf_fraction=0.02), n_classes=3),
        X, y, outcomes)
    back = tree_from_json(json.loads(export_tree(tree, "json")))
    Xq = rng.normal(size=(1000, 4))
    np.testing.assert_array_equal(tree.predict_proba_batch(Xq),
                                  back.predict_proba_batch(Xq))
    np.testing.assert_array_equal(tree.leaf_index_batch(Xq), back.leaf_index_batch(Xq))
    a = tree.outcome_avg_batch(Xq)
    b = back.outcome_avg_batch(Xq)
    assert np.array_equal(a, b, equal_nan=True)


def test_export_is_bitwise_deterministic_across_refits():
    rng = np.random.default_rng(29)
    X = rng.normal(size=(300, 3))
    y = rng.integers(0, 2, size=300)
    hp = TreeHyperparams(max_depth=4, min_leaf_fraction=0.03)
    a = export_tree(fit_tree(X, y, hp), "json")
    b = export_tree(fit_tree(X.copy(), y.copy(), hp), "json")
    assert a == b


def test_unknown_export_format_raises():
    tree = fit_tree(np.ones((2, 1)), [0, 1], TreeHyperparams())
    with pytest.raises(TreeError, match="unknown export format"):
        export_tree(tree, "yaml")
