#!/usr/bin/env python3
import numpy as np
import pytest

from conftest import make_dataset, signal_dataset
from ponv_tool.automl import GenomeFactory, ModelGene, PipelineGenome
from ponv_tool.dataset import SynthConfig, synth_generate
from ponv_tool.errors import ContractError
from ponv_tool.explain import (NOISE_FEATURE, ShapMatrix, TreeExplainer, ablation_importance, shap_brute, shap_summary,
                               shap_tree, with_noise_feature)
from ponv_tool.model import DecisionTree, TreeEnsemble, fit
from ponv_tool.pipeline import Pipeline
from ponv_tool.splitter import random_partition

FAMILY_PARAMS = {
    "tree": {"max_depth": 4, "min_samples_leaf": 2},
    "forest": {"n_estimators": 3, "max_depth": 3, "min_samples_leaf": 2},
    "boosting": {"n_estimators": 4, "max_depth": 2, "min_samples_leaf": 2},
}


def tree_genome(**params):
    return PipelineGenome("median", "none", None, ModelGene.of("tree", params))


def random_model(seed):
    rng = np.random.default_rng(seed)
    family = ("tree", "forest", "boosting")[seed % 3]
    p = int(rng.integers(2, 9))
    X = rng.standard_normal((80, p))
    X[rng.random((80, p)) < 0.05] = np.nan
    y = (X[:, 0] + 0.5 * np.nan_to_num(X[:, 1]) + rng.normal(0, 0.7, 80) > 0).astype(int)
    m = fit(X, y, family, FAMILY_PARAMS[family], seed=seed)
    return m, X, rng


def test_single_stump_attribution_is_the_prediction_change():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    m = fit(X, np.array([0, 0, 1, 1]), "tree", {"max_depth": 1, "min_samples_leaf": 1})
    explainer = TreeExplainer(m, np.array([[1.0]]))
    phi = explainer.shap_values([4.0])
    assert explainer.base_value == pytest.approx(0.0)
    assert phi.tolist() == pytest.approx([m.raw_output(np.array([[4.0]]))[0] - explainer.base_value])


def test_record_equal_to_background_gets_zero_attribution():
    m, X, _ = random_model(1)
    assert np.allclose(shap_tree(m, X[3], X[3:4]), 0.0)


@pytest.mark.parametrize("seed", range(200))
def test_tree_shap_matches_brute_force(seed):
    m, X, rng = random_model(seed)
    background = X[rng.choice(80, size=6, replace=False)]
    record = X[int(rng.integers(80))]
    assert np.allclose(shap_tree(m, record, background), shap_brute(m, record, background), atol=1e-9)


def test_attributions_add_up_to_the_prediction():
    m, X, rng = random_model(3)
    background = X[:20]
    explainer = TreeExplainer(m, background)
    for record in X[20:30]:
        total = explainer.base_value + explainer.shap_values(record).sum()
        assert total == pytest.approx(m.raw_output(record.reshape(1, -1))[0], abs=1e-9)


def test_brute_force_symmetry_and_dummy():
    phi = shap_brute(lambda X: X[:, 0] + X[:, 1], [1.0, 1.0, 5.0], [[0.0, 0.0, 0.0]])
    assert phi.tolist() == pytest.approx([1.0, 1.0, 0.0])


def test_brute_force_feature_limit():
    with pytest.raises(ContractError):
        shap_brute(lambda X: X.sum(axis=1), np.zeros(16), np.zeros((1, 16)))
    with pytest.raises(ContractError):
        shap_brute(lambda X: X.sum(axis=1), np.zeros(3), np.zeros((0, 3)))


def test_constant_model_has_zero_shap():
    d = signal_dataset(n=40)
    constant = make_dataset({"SIGNAL": d.column("SIGNAL")}, [0] * 40)
    fitted = Pipeline().fit(constant, "PONV_PACU")
    matrix = shap_summary(fitted, constant, background_size=10)
    assert np.all(matrix.values == 0.0)
    assert matrix.order == (0,)


def planted(n=400, seed=0):
    rng = np.random.default_rng(seed)
    features = {f"SIG_{i}": rng.standard_normal(n) for i in range(4)}
    features.update({f"JUNK_{i}": rng.standard_normal(n) for i in range(6)})
    signal = sum(features[f"SIG_{i}"] for i in range(4))
    return make_dataset(features, (signal > 0).astype(int))


def test_planted_signal_ranks_first():
    d = planted()
    fitted = Pipeline(family="forest", params={"n_estimators": 10, "max_depth": 4}).fit(d, "PONV_PACU", seed=1)
    matrix = shap_summary(fitted, d, background_size=30, max_records=60, seed=2)
    assert sum(name.startswith("SIG_") for name in matrix.top(5)) >= 3
    again = shap_summary(fitted, d, background_size=30, max_records=60, seed=2)
    assert again.order == matrix.order
    assert np.array_equal(again.values, matrix.values)
    frame = matrix.summary_frame()
    assert list(frame["mean_abs_shap"]) == sorted(frame["mean_abs_shap"], reverse=True)
    assert len(matrix.long_frame(top_n=2)) == 2 * 60


def test_noise_feature_is_one_fixed_draw():
    d = signal_dataset(n=50)
    first = with_noise_feature(d, seed=4).column(NOISE_FEATURE)
    second = with_noise_feature(d, seed=4).column(NOISE_FEATURE)
    assert np.array_equal(first, second)
    assert NOISE_FEATURE not in d.schema


def test_ablation_credits_the_predictive_feature():
    d = signal_dataset(n=200, seed=0, extra_noise=1)
    p = random_partition(d, 4, seed=1)
    vector = ablation_importance(GenomeFactory("PONV_PACU", tree_genome(max_depth=2)), d, p, seed=0,
                                 target="PONV_PACU")
    importance = dict(zip(vector.names, vector.values))
    assert importance == {"SIGNAL": pytest.approx(1.0), "JUNK_0": 0.0}
    assert vector.zeroed == ("JUNK_0",)
    assert vector.values.sum() == pytest.approx(1.0)
    assert vector.to_frame()["zeroed"].tolist() == [False, True]


def test_duplicated_signal_falls_back_to_uniform():
    signal = signal_dataset(n=120, seed=2, extra_noise=0).column("SIGNAL")
    d = make_dataset({"SIGNAL": signal, "COPY": signal}, (signal > 0).astype(int))
    p = random_partition(d, 3, seed=0)
    vector = ablation_importance(GenomeFactory("PONV_PACU", tree_genome(max_depth=2)), d, p, seed=0,
                                 target="PONV_PACU")
    assert np.all(vector.raw_deltas == 0.0)
    assert vector.flags == ("all_zeroed",)
    assert vector.values.tolist() == [0.5, 0.5]


@pytest.mark.slow
def test_ablation_on_planted_synthetic_cohort(schema):
    config = SynthConfig(n=2000, prevalence=0.5, noise_features=20, full_schema=False)
    d = synth_generate(config, seed=3, schema=schema)
    p = random_partition(d, 5, seed=0)
    genome = tree_genome(max_depth=4, min_samples_leaf=40, prune=False)
    vector = ablation_importance(GenomeFactory("PONV_PACU", genome), d, p, seed=0, target="PONV_PACU", workers=2)
    importance = dict(zip(vector.names, vector.values))
    assert all(importance[name] > 0 for name in config.informative)
    noise = [name for name in vector.names if name.startswith("NOISE_")]
    assert len(noise) == 20
    assert sum(importance[name] == 0.0 for name in noise) >= 18
    assert vector.values.sum() == pytest.approx(1.0, abs=1e-9)


def chain_tree(depth):
    """Each internal node k splits feature k at 0; its left child is a leaf worth k + 1, the last right leaf 100."""
    n = 2 * depth + 1
    internal = [i % 2 == 0 and i < n - 1 for i in range(n)]
    return TreeEnsemble("single", [DecisionTree(
        feature=np.array([i // 2 if internal[i] else -1 for i in range(n)], dtype=np.int64),
        threshold=np.array([0.0 if internal[i] else np.nan for i in range(n)]),
        left=np.array([i + 1 if internal[i] else -1 for i in range(n)], dtype=np.int64),
        right=np.array([i + 2 if internal[i] else -1 for i in range(n)], dtype=np.int64),
        value=np.array([0.0 if internal[i] else (100.0 if i == n - 1 else float(i // 2 + 1)) for i in range(n)]),
        n_samples=np.ones(n, dtype=np.int64),
        missing_left=np.zeros(n, dtype=bool),
        gain=np.zeros(n),
        error=np.zeros(n),
        left_categories=[None] * n,
        known_categories=[None] * n,
    )], depth)


def test_paths_deeper_than_sixty_four_features():
    m = chain_tree(70)
    record, background = np.ones(70), -np.ones((1, 70))
    explainer = TreeExplainer(m, background)
    phi = explainer.shap_values(record)
    assert explainer.base_value == pytest.approx(1.0)
    assert np.all(np.isfinite(phi))
    assert explainer.base_value + phi.sum() == pytest.approx(100.0, abs=1e-9)
    small = chain_tree(6)
    assert np.allclose(shap_tree(small, np.ones(6), -np.ones((1, 6))),
                       shap_brute(small, np.ones(6), -np.ones((1, 6))), atol=1e-9)


@pytest.mark.slow
@pytest.mark.parametrize("family", ["forest", "boosting"])
def test_attributions_add_up_on_a_thousand_records(family):
    rng = np.random.default_rng(8)
    X = rng.standard_normal((1200, 6))
    X[rng.random(X.shape) < 0.05] = np.nan
    y = (np.nan_to_num(X[:, 0]) - np.nan_to_num(X[:, 2]) + rng.normal(0, 0.5, 1200) > 0).astype(int)
    params = {"n_estimators": 20, "max_depth": 4, "min_samples_leaf": 5}
    m = fit(X, y, family, params, seed=2)
    explainer = TreeExplainer(m, X[:50])
    records = X[200:1200]
    raw = m.raw_output(records)
    totals = np.array([explainer.base_value + explainer.shap_values(record).sum() for record in records])
    assert len(totals) == 1000
    assert np.max(np.abs(totals - raw)) <= 1e-9


def test_one_hot_columns_are_summed_per_source():
    values = np.array([[0.5, -0.25, 1.0], [0.0, 0.75, -2.0]])
    matrix = ShapMatrix(("SURG_TYPE=1", "SURG_TYPE=2", "AGE"), values, np.zeros_like(values), 0.1, (2, 1, 0),
                        ("SURG_TYPE", "SURG_TYPE", "AGE"))
    grouped = matrix.by_source()
    assert list(grouped.columns) == ["SURG_TYPE", "AGE"]
    assert grouped["SURG_TYPE"].tolist() == pytest.approx([0.25, 0.75])
    assert np.allclose(grouped.sum(axis=1), values.sum(axis=1))
    unlabeled = ShapMatrix(("A", "B"), values[:, :2], np.zeros((2, 2)), 0.0, (0, 1))
    assert list(unlabeled.by_source().columns) == ["A", "B"]
