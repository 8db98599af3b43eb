"""
Feature importance for fitted PONV pipelines.

Ablation importance retrains the pipeline without each feature and compares the
cross-validated accuracy drop with the drop caused by removing an appended
standard-normal NOISE feature; features that matter no more than noise get 0.

SHAP values are exact interventional Shapley values of the model's raw output
(probability for single trees and forests, log-odds for boosted models) with
absent features drawn from a background set.
"""
import math
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from .dataset import FeatureSpec
from .errors import ContractError
from .utils import parallel_map, stable_seed

logger = logging.getLogger(__name__)

NOISE_FEATURE = "NOISE"
NOISE_LIMIT = 50.0
MAX_BRUTE_FEATURES = 15


# ---------------------------------------------------------------------------
# Ablation importance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImportanceVector:
    names: Tuple[str, ...]
    values: np.ndarray
    raw_deltas: np.ndarray
    baseline_accuracy: float
    noise_delta: float
    zeroed: Tuple[str, ...]
    flags: Tuple[str, ...] = ()

    def to_frame(self):
        return pd.DataFrame({"feature": self.names, "importance": self.values, "delta": self.raw_deltas,
                             "zeroed": [n in self.zeroed for n in self.names]})


def _cv_accuracy(task):
    factory, d, folds, target, seed = task
    accuracies = []
    for fold_no, (train_idx, test_idx) in enumerate(folds):
        fitted = factory(d.take(train_idx), stable_seed(seed, "fold", fold_no))
        test = d.take(test_idx)
        accuracies.append(float(np.mean(fitted.predict(test) == test.target(target))))
    return float(np.mean(accuracies))


def with_noise_feature(d, seed):
    """Append one N(0, 1) column named NOISE (one draw per record, fixed seed)."""
    rng = np.random.default_rng(stable_seed(seed, "noise"))
    values = np.clip(rng.standard_normal(d.n_rows), -NOISE_LIMIT, NOISE_LIMIT)
    spec = FeatureSpec(name=NOISE_FEATURE, kind="continuous", min=-NOISE_LIMIT, max=NOISE_LIMIT,
                       description="Standard normal noise reference")
    return d.with_feature(spec, values)


def ablation_importance(factory, d, p, seed, target, workers=1):
    """
    delta_f = CV accuracy with every feature - CV accuracy without f, all runs
    sharing the same seed and hyperparameters. Features with |delta_f| <=
    |delta_NOISE| get importance 0; the rest are |delta_f| normalised to sum 1.
    """
    augmented = with_noise_feature(d, seed)
    folds = p.folds()
    features = augmented.schema.feature_names
    variants = [augmented] + [augmented.drop([f]) for f in features]
    accuracies = parallel_map(_cv_accuracy, [(factory, v, folds, target, seed) for v in variants], workers)
    baseline = accuracies[0]
    deltas = {f: baseline - acc for f, acc in zip(features, accuracies[1:])}
    noise_delta = deltas.pop(NOISE_FEATURE)
    names = tuple(f for f in features if f != NOISE_FEATURE)
    raw = np.array([deltas[f] for f in names])
    keep = np.abs(raw) > abs(noise_delta)
    values = np.where(keep, np.abs(raw), 0.0)
    flags = ()
    total = values.sum()
    if total > 0:
        values = values / total
    else:
        logger.warning("Every feature fell below the noise floor; returning uniform importance")
        values = np.full(len(names), 1.0 / len(names)) if names else values
        flags = ("all_zeroed",)
    zeroed = tuple(n for n, k in zip(names, keep) if not k)
    logger.info(f"Ablation importance: baseline accuracy {baseline:.4f}, noise delta {noise_delta:.4f}, "
                f"{len(names) - len(zeroed)} of {len(names)} features above the noise floor")
    return ImportanceVector(names, values, raw, baseline, noise_delta, zeroed, flags)


# ---------------------------------------------------------------------------
# SHAP
# ---------------------------------------------------------------------------


def _leaf_paths(tree):
    """[(leaf value, [(node, went_left), ...])] for every leaf."""
    paths = []
    stack = [(0, [])]
    while stack:
        node, path = stack.pop()
        if tree.feature[node] < 0:
            paths.append((float(tree.value[node]), path))
            continue
        stack.append((int(tree.right[node]), path + [(node, False)]))
        stack.append((int(tree.left[node]), path + [(node, True)]))
    return paths


class _LeafTerm:
    """One reachable leaf: its features and, per background row, which of them the row satisfies."""

    def __init__(self, tree, value, path, background):
        self.value = value
        self.features = sorted({int(tree.feature[node]) for node, _ in path})
        self.conditions = {f: [] for f in self.features}
        for node, went_left in path:
            self.conditions[int(tree.feature[node])].append((node, went_left))
        n_bg = background.shape[0]
        self.z_ok = np.ones((len(self.features), n_bg), dtype=bool)
        for i, f in enumerate(self.features):
            for node, went_left in self.conditions[f]:
                nodes = np.full(n_bg, node, dtype=np.int64)
                self.z_ok[i] &= tree._route(nodes, background[:, f], None) == went_left

    def x_ok(self, tree, x):
        return np.array([all(tree.goes_left(node, float(x[f])) == went_left for node, went_left in self.conditions[f])
                         for f in self.features], dtype=bool)


class TreeExplainer:
    """Exact interventional SHAP for a TreeEnsemble against a fixed background matrix."""

    def __init__(self, m, background):
        background = np.atleast_2d(np.asarray(background, dtype=np.float64))
        if background.shape[0] == 0:
            raise ContractError("SHAP needs a non-empty background set")
        self.model = m
        self.background = background
        offset, terms = m.terms()
        self.terms = [(coef, tree, [_LeafTerm(tree, v, path, background) for v, path in _leaf_paths(tree)])
                      for coef, tree in terms]
        self.base_value = float(np.mean(m.raw_output(background)))

    def shap_values(self, x):
        x = np.asarray(x, dtype=np.float64).ravel()
        p = self.model.n_features
        phi = np.zeros(p)
        n_bg = self.background.shape[0]
        for coef, tree, leaves in self.terms:
            for leaf in leaves:
                if not leaf.features or leaf.value == 0.0:
                    continue
                x_ok = leaf.x_ok(tree, x)[:, None]
                z_ok = leaf.z_ok
                in_a = x_ok & ~z_ok
                in_b = ~x_ok & z_ok
                reachable = ~np.any(~x_ok & ~z_ok, axis=0)
                a = in_a.sum(axis=0)
                b = in_b.sum(axis=0)
                active = reachable & (a + b > 0)
                if not active.any():
                    continue
                scale = coef * leaf.value / n_bg
                for j in np.flatnonzero(active):
                    aj, bj = int(a[j]), int(b[j])
                    denom = math.factorial(aj + bj)
                    if aj:
                        w_pos = math.factorial(aj - 1) * math.factorial(bj) / denom
                        for i in np.flatnonzero(in_a[:, j]):
                            phi[leaf.features[i]] += scale * w_pos
                    if bj:
                        w_neg = math.factorial(aj) * math.factorial(bj - 1) / denom
                        for i in np.flatnonzero(in_b[:, j]):
                            phi[leaf.features[i]] -= scale * w_neg
        return phi


def shap_tree(m, record, background):
    """Attributions per encoded feature; base + sum(attributions) == m.raw_output(record)."""
    return TreeExplainer(m, background).shap_values(record)


def shap_brute(m, record, background):
    """Shapley values by enumerating all 2^p coalitions (p <= 15) with background-marginalised absent features."""
    value_fn = m.raw_output if hasattr(m, "raw_output") else m
    x = np.asarray(record, dtype=np.float64).ravel()
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    p = x.size
    if p > MAX_BRUTE_FEATURES:
        raise ContractError(f"brute-force Shapley supports at most {MAX_BRUTE_FEATURES} features, got {p}")
    if background.shape[0] == 0:
        raise ContractError("SHAP needs a non-empty background set")
    n_bg = background.shape[0]
    masks = ((np.arange(2 ** p)[:, None] >> np.arange(p)[None, :]) & 1).astype(bool)
    hybrid = np.where(masks[:, None, :], x[None, None, :], background[None, :, :]).reshape(-1, p)
    v = np.asarray(value_fn(hybrid), dtype=np.float64).reshape(2 ** p, n_bg).mean(axis=1)
    sizes = masks.sum(axis=1)
    phi = np.zeros(p)
    for i in range(p):
        without = np.flatnonzero(~masks[:, i])
        s = sizes[without]
        weights = np.array([math.factorial(k) * math.factorial(p - k - 1) / math.factorial(p) for k in s])
        phi[i] = float(np.sum(weights * (v[without + (1 << i)] - v[without])))
    return phi


@dataclass(frozen=True)
class ShapMatrix:
    names: Tuple[str, ...]
    values: np.ndarray
    feature_values: np.ndarray
    base_value: float
    order: Tuple[int, ...]
    sources: Optional[Tuple[str, ...]] = None

    def mean_abs(self):
        return np.abs(self.values).mean(axis=0) if self.values.size else np.zeros(len(self.names))

    def top(self, n=10):
        return [self.names[i] for i in self.order[:n]]

    def summary_frame(self):
        mean_abs = self.mean_abs()
        return pd.DataFrame({"rank": range(1, len(self.order) + 1),
                             "feature": [self.names[i] for i in self.order],
                             "mean_abs_shap": [mean_abs[i] for i in self.order]})

    def long_frame(self, top_n=None):
        """One row per (record, feature): the data behind a beeswarm plot."""
        chosen = self.order if top_n is None else self.order[:top_n]
        rows = []
        for i in chosen:
            for r in range(self.values.shape[0]):
                rows.append({"feature": self.names[i], "record": r, "shap": self.values[r, i],
                             "value": self.feature_values[r, i]})
        return pd.DataFrame(rows, columns=["feature", "record", "shap", "value"])

    def by_source(self):
        """Attributions summed over the encoded columns of each source feature (one-hot groups)."""
        sources = self.sources or self.names
        unique = list(dict.fromkeys(sources))
        grouped = np.column_stack([self.values[:, [j for j, s in enumerate(sources) if s == u]].sum(axis=1)
                                   for u in unique]) if self.values.size else np.zeros((0, len(unique)))
        return pd.DataFrame(grouped, columns=unique)


def _order_by_mean_abs(values, p):
    mean_abs = np.abs(values).mean(axis=0) if values.size else np.zeros(p)
    return tuple(int(i) for i in np.lexsort((np.arange(p), -mean_abs)))


def shap_summary(fitted, d, background_size=100, max_records=None, seed=0):
    """
    SHAP matrix for a fitted pipeline over the records of `d`, features ordered by
    mean |attribution| (ties by column order). The background is a seeded sample
    of at most `background_size` records of `d`.
    """
    X = fitted.transform(d)
    rng = np.random.default_rng(stable_seed(seed, "shap_background"))
    bg_rows = np.sort(rng.choice(X.shape[0], size=min(background_size, X.shape[0]), replace=False))
    explainer = TreeExplainer(fitted.model, X[bg_rows])
    rows = np.arange(X.shape[0]) if max_records is None else np.arange(min(max_records, X.shape[0]))
    values = np.array([explainer.shap_values(X[r]) for r in rows]).reshape(len(rows), X.shape[1])
    logger.info(f"SHAP computed for {len(rows)} records against {len(bg_rows)} background rows")
    return ShapMatrix(tuple(fitted.feature_names), values, X[rows], explainer.base_value,
                      _order_by_mean_abs(values, X.shape[1]), tuple(fitted.feature_sources))
