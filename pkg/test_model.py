#!/usr/bin/env python3
import json

import numpy as np
import pytest

from ponv_tool.errors import ContractError
from ponv_tool.model import (TreeEnsemble, constant_tree, cost_complexity_path, fit, information_gain, log_loss,
                             predict_proba, prune, split_gain_importance)

FULL_TREE = {"max_depth": None, "min_samples_leaf": 1, "prune": False}


def accuracy(m, X, y):
    return float(np.mean(m.predict(X) == y))


def noise_problem(n, seed, rate=0.5, p=3):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, p)), (rng.random(n) < rate).astype(int)


def test_separable_stump():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    y = np.array([0, 0, 1, 1])
    m = fit(X, y, "tree", FULL_TREE)
    tree = m.trees[0]
    assert tree.depth() == 1
    assert tree.threshold[0] == 2.5
    assert accuracy(m, X, y) == 1.0


def test_xor_needs_depth_two():
    X = np.array([[a, b] for a in (0.0, 1.0) for b in (0.0, 1.0)] * 5)
    y = (X[:, 0] != X[:, 1]).astype(int)
    deep = fit(X, y, "tree", {"max_depth": 2, "min_samples_leaf": 1})
    shallow = fit(X, y, "tree", {"max_depth": 1, "min_samples_leaf": 1})
    assert accuracy(deep, X, y) == 1.0
    assert accuracy(shallow, X, y) <= 0.5


def test_single_class_gives_flagged_constant_model():
    X = np.zeros((5, 2))
    for label in (0, 1):
        m = fit(X, np.full(5, label), "forest")
        assert "single_class" in m.flags
        assert predict_proba(m, [3.0, -1.0]) == float(label)


def test_constant_tree_prediction():
    m = TreeEnsemble("single", [constant_tree(0.3, 10)], n_features=2)
    assert predict_proba(m, [1.0, 2.0]) == pytest.approx(0.3)
    assert predict_proba(m, [np.nan, -50.0]) == pytest.approx(0.3)


def test_forest_averages_leaf_probabilities():
    m = TreeEnsemble("forest", [constant_tree(0.2, 10), constant_tree(0.6, 10)], n_features=1)
    assert predict_proba(m, [0.0]) == pytest.approx(0.4)


def test_boosted_scores_summing_to_zero_give_one_half():
    m = TreeEnsemble("boosted", [constant_tree(1.5, 10), constant_tree(-1.5, 10)], n_features=1,
                     init_score=0.0, tree_weights=[1.0, 1.0])
    assert predict_proba(m, [7.0]) == pytest.approx(0.5)


def test_probabilities_stay_in_unit_interval():
    X, y = noise_problem(150, seed=1)
    X[::7, 1] = np.nan
    for family in ("tree", "forest", "boosting"):
        m = fit(X, y, family, {"n_estimators": 5} if family != "tree" else None, seed=2)
        proba = m.predict_proba(X * 3.0)
        assert np.all((proba >= 0.0) & (proba <= 1.0))


def test_leaf_sample_counts_sum_to_training_size():
    X, y = noise_problem(97, seed=3)
    tree = fit(X, y, "tree", {"max_depth": 4, "min_samples_leaf": 3}).trees[0]
    leaves = tree.feature < 0
    assert tree.n_samples[leaves].sum() == 97
    assert np.all((tree.value[leaves] >= 0.0) & (tree.value[leaves] <= 1.0))
    internal = np.flatnonzero(~leaves)
    assert np.all(tree.left[internal] >= 0) and np.all(tree.right[internal] >= 0)


@pytest.mark.parametrize("seed", range(10))
def test_root_split_has_the_best_information_gain(seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 12, 40).astype(float)
    y = (rng.random(40) < 0.2 + 0.05 * x).astype(int)
    if y.min() == y.max():
        pytest.skip("single class draw")
    tree = fit(x.reshape(-1, 1), y, "tree", {"max_depth": 1, "min_samples_leaf": 1}).trees[0]
    values = np.unique(x)
    candidates = [information_gain(y, x <= (a + b) / 2) for a, b in zip(values[:-1], values[1:])]
    assert tree.gain[0] / 40 == pytest.approx(max(candidates), abs=1e-12)
    assert information_gain(y, x <= tree.threshold[0]) == pytest.approx(max(candidates), abs=1e-12)


def test_predictions_are_piecewise_constant():
    X, y = noise_problem(200, seed=4)
    m = fit(X, y, "forest", {"n_estimators": 6, "max_depth": 4}, seed=1)
    thresholds = np.concatenate([t.threshold[t.feature == 0] for t in m.trees])
    record = X[0].copy()
    above = thresholds[thresholds > record[0]]
    gap = (above.min() - record[0]) if above.size else 1.0
    nudged = record.copy()
    nudged[0] += gap / 2
    assert predict_proba(m, nudged) == predict_proba(m, record)


def test_missing_values_follow_the_majority_side():
    X = np.array([[1.0], [2.0], [3.0], [4.0], [5.0], [6.0], [10.0], [11.0]])
    y = np.array([0, 0, 0, 0, 0, 0, 1, 1])
    m = fit(X, y, "tree", FULL_TREE)
    tree = m.trees[0]
    assert tree.missing_left[0]
    assert predict_proba(m, [np.nan]) == predict_proba(m, [1.0])


def test_unknown_category_is_routed_and_tallied():
    X = np.array([[0.0], [0.0], [1.0], [1.0], [2.0], [2.0], [2.0]])
    y = np.array([1, 1, 0, 0, 0, 0, 0])
    m = fit(X, y, "tree", FULL_TREE, categorical=[True])
    tree = m.trees[0]
    assert tree.left_categories[0] is not None
    m.predict_proba(np.array([[7.0]]))
    assert m.diagnostics["unknown_categories"] == 1
    majority_side = predict_proba(m, [2.0])
    assert predict_proba(m, [7.0]) == majority_side


def test_boosted_training_loss_never_increases():
    X, y = noise_problem(300, seed=5, rate=0.3)
    X[:, 0] += 1.5 * y
    m = fit(X, y, "boosting", {"n_estimators": 40, "max_depth": 2, "learning_rate": 0.3}, seed=0)
    loss = np.asarray(m.training_loss)
    assert loss.size == 41
    assert np.all(np.diff(loss) <= 1e-12)
    assert log_loss(y, m.raw_output(X)) == pytest.approx(loss[-1], abs=1e-12)


@pytest.mark.parametrize("family", ["tree", "forest", "boosting"])
def test_serialization_round_trips_exactly(tmp_path, family):
    X, y = noise_problem(120, seed=6)
    X[::5, 2] = np.nan
    m = fit(X, y, family, {"n_estimators": 4} if family != "tree" else {"prune": True}, seed=3,
            feature_names=("A", "B", "C"))
    text = m.to_json()
    again = TreeEnsemble.from_json(text)
    assert again.to_json() == text
    path = tmp_path / "model.json"
    m.save(str(path))
    loaded = TreeEnsemble.load(str(path))
    assert np.array_equal(loaded.predict_proba(X), m.predict_proba(X))


def test_saved_provenance_is_ignored_on_load(tmp_path):
    X, y = noise_problem(60, seed=2)
    m = fit(X, y, "tree", FULL_TREE)
    path = tmp_path / "model.json"
    m.save(str(path), {"config_hash": "abc123", "seeds": {"seed": 0}})
    saved = json.loads(path.read_text(encoding="utf-8"))
    assert saved["provenance"]["config_hash"] == "abc123"
    loaded = TreeEnsemble.load(str(path))
    assert loaded.to_json() == m.to_json()
    assert "provenance" not in json.loads(m.to_json())


def test_unknown_format_is_rejected():
    with pytest.raises(ContractError):
        TreeEnsemble.from_json('{"format": "something-else", "version": 1}')


def test_forest_is_deterministic_for_any_worker_count():
    X, y = noise_problem(120, seed=7)
    one = fit(X, y, "forest", {"n_estimators": 4, "max_depth": 3}, seed=11, workers=1)
    two = fit(X, y, "forest", {"n_estimators": 4, "max_depth": 3}, seed=11, workers=2)
    assert one.to_json() == two.to_json()


def test_fit_rejects_bad_input():
    with pytest.raises(ContractError):
        fit(np.zeros((3, 1)), np.array([0, 1]), "tree")
    with pytest.raises(ContractError):
        fit(np.zeros((3, 1)), np.array([0, 1, 0]), "svm")


def test_pruning_noise_drives_tree_to_root():
    X, y = noise_problem(400, seed=8, rate=0.2)
    holdout_X, holdout_y = noise_problem(5000, seed=9, rate=0.2)
    tree = fit(X, y, "tree", FULL_TREE).trees[0]
    assert tree.n_nodes > 1
    pruned = prune(tree, holdout_X, holdout_y)
    assert pruned.n_nodes == 1


def test_pruning_keeps_an_already_optimal_tree():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    y = np.array([0, 0, 1, 1])
    tree = fit(X, y, "tree", FULL_TREE).trees[0]
    pruned = prune(tree, np.array([[1.5], [3.5]]), np.array([0, 1]))
    assert pruned.n_nodes == tree.n_nodes


def test_pruning_with_empty_holdout_is_flagged():
    X, y = noise_problem(50, seed=10)
    tree = fit(X, y, "tree", FULL_TREE).trees[0]
    pruned = prune(tree, np.empty((0, 3)), np.empty(0))
    assert "empty_holdout" in pruned.flags
    assert pruned.n_nodes == tree.n_nodes


@pytest.mark.parametrize("seed", range(100))
def test_pruning_never_grows_a_tree(seed):
    X, y = noise_problem(60, seed=100 + seed, rate=0.4)
    holdout_X, holdout_y = noise_problem(30, seed=500 + seed, rate=0.4)
    tree = fit(X, y, "tree", {"max_depth": 5, "min_samples_leaf": 1}).trees[0]
    assert prune(tree, holdout_X, holdout_y).n_nodes <= tree.n_nodes


def test_cost_complexity_path_ends_at_the_root():
    X, y = noise_problem(80, seed=12)
    tree = fit(X, y, "tree", FULL_TREE).trees[0]
    path = cost_complexity_path(tree)
    alphas = [a for a, _ in path]
    assert alphas[0] == 0.0
    assert alphas == sorted(alphas)
    assert 0 in path[-1][1]


def test_pruned_tree_family_uses_a_holdout():
    X, y = noise_problem(200, seed=13, rate=0.2)
    pruned = fit(X, y, "tree", {"max_depth": None, "min_samples_leaf": 1, "prune": True}, seed=0)
    grown = fit(X, y, "tree", FULL_TREE, seed=0)
    assert pruned.trees[0].n_nodes < grown.trees[0].n_nodes


def test_split_gain_importance_is_normalised():
    X, y = noise_problem(200, seed=14)
    X[:, 1] += 2.0 * y
    m = fit(X, y, "forest", {"n_estimators": 5, "max_depth": 3, "max_features": "all"}, seed=0)
    gains = split_gain_importance(m)
    assert gains.sum() == pytest.approx(1.0)
    assert int(np.argmax(gains)) == 1
    constant = TreeEnsemble("single", [constant_tree(0.5, 3)], n_features=3)
    assert np.all(split_gain_importance(constant) == 0.0)
