"""
Tree models for binary PONV prediction: CART-style trees grown on information
gain, random forests, Newton-step gradient boosting, and cost-complexity
post-pruning selected on held-out accuracy.

Trees are stored as flat node arrays (node 0 is the root, feature -1 marks a
leaf). Continuous splits send x <= threshold left; categorical splits send the
recorded category subset left. A missing value (NaN) at a split, or a category
the node never saw during fitting, follows the direction that received the
majority of training rows.
"""
import json
import math
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import expit

from .errors import ContractError
from .utils import parallel_map, stable_seed

logger = logging.getLogger(__name__)

FORMAT_NAME = "ponv-tree-ensemble"
FORMAT_VERSION = 1
MODEL_FAMILIES = ("tree", "forest", "boosting")

DEFAULT_PARAMS = {
    "tree": {"max_depth": 6, "min_samples_leaf": 5, "prune": False},
    "forest": {"n_estimators": 100, "max_depth": 8, "min_samples_leaf": 2, "max_features": "sqrt", "prune": False},
    "boosting": {"n_estimators": 200, "max_depth": 3, "learning_rate": 0.1, "min_samples_leaf": 5, "reg_lambda": 1.0},
}
TREE_HOLDOUT_FRACTION = 0.25


def _entropy(p):
    p = np.clip(p, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(p * np.log2(p) + (1.0 - p) * np.log2(1.0 - p))
    return np.nan_to_num(h, nan=0.0)


def information_gain(labels, left_mask):
    """Entropy reduction of splitting `labels` by `left_mask` (used by tests and the selector)."""
    labels = np.asarray(labels, dtype=np.float64)
    n = labels.size
    if n == 0:
        return 0.0
    nl = int(left_mask.sum())
    nr = n - nl
    parent = float(_entropy(labels.mean()))
    child = 0.0
    if nl:
        child += nl / n * float(_entropy(labels[left_mask].mean()))
    if nr:
        child += nr / n * float(_entropy(labels[~left_mask].mean()))
    return parent - child


@dataclass
class DecisionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    missing_left: np.ndarray
    gain: np.ndarray
    error: np.ndarray
    left_categories: List[Optional[Tuple[float, ...]]]
    known_categories: List[Optional[Tuple[float, ...]]]
    flags: Tuple[str, ...] = ()

    @property
    def n_nodes(self):
        return int(self.feature.size)

    @property
    def n_leaves(self):
        return int(np.sum(self.feature < 0))

    def is_leaf(self, node):
        return self.feature[node] < 0

    def depth(self):
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def goes_left(self, node, x):
        """Routing decision for a single value at an internal node."""
        if x is None or (isinstance(x, float) and math.isnan(x)):
            return bool(self.missing_left[node])
        cats = self.left_categories[node]
        if cats is not None:
            if x in cats:
                return True
            if x in self.known_categories[node]:
                return False
            return bool(self.missing_left[node])
        return bool(x <= self.threshold[node])

    def _route(self, nodes, values, tally):
        missing = np.isnan(values)
        with np.errstate(invalid="ignore"):
            go_left = np.where(missing, self.missing_left[nodes], values <= self.threshold[nodes])
        for i in np.flatnonzero(~missing):
            cats = self.left_categories[nodes[i]]
            if cats is None:
                continue
            node = nodes[i]
            if values[i] in cats:
                go_left[i] = True
            elif values[i] in self.known_categories[node]:
                go_left[i] = False
            else:
                go_left[i] = self.missing_left[node]
                if tally is not None:
                    tally["unknown_categories"] = tally.get("unknown_categories", 0) + 1
        return go_left

    def apply(self, X, tally=None):
        """Leaf index reached by every row of X."""
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[node]
            active = np.flatnonzero(f >= 0)
            if active.size == 0:
                return node
            nd = node[active]
            go_left = self._route(nd, X[active, f[active]], tally)
            node[active] = np.where(go_left, self.left[nd], self.right[nd])

    def predict_value(self, X, tally=None):
        return self.value[self.apply(X, tally)]

    def to_dict(self):
        def cats(values):
            return [None if c is None else list(c) for c in values]
        return {
            "feature": self.feature.tolist(),
            "threshold": [None if math.isnan(t) else t for t in self.threshold.tolist()],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
            "missing_left": self.missing_left.tolist(),
            "gain": self.gain.tolist(),
            "error": self.error.tolist(),
            "left_categories": cats(self.left_categories),
            "known_categories": cats(self.known_categories),
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, raw):
        def cats(values):
            return [None if c is None else tuple(c) for c in values]
        return cls(
            feature=np.asarray(raw["feature"], dtype=np.int64),
            threshold=np.asarray([np.nan if t is None else t for t in raw["threshold"]], dtype=np.float64),
            left=np.asarray(raw["left"], dtype=np.int64),
            right=np.asarray(raw["right"], dtype=np.int64),
            value=np.asarray(raw["value"], dtype=np.float64),
            n_samples=np.asarray(raw["n_samples"], dtype=np.int64),
            missing_left=np.asarray(raw["missing_left"], dtype=bool),
            gain=np.asarray(raw["gain"], dtype=np.float64),
            error=np.asarray(raw["error"], dtype=np.float64),
            left_categories=cats(raw["left_categories"]),
            known_categories=cats(raw["known_categories"]),
            flags=tuple(raw.get("flags", ())),
        )

    def subtree(self, collapsed):
        """Copy of the tree with every node in `collapsed` turned into a leaf, renumbered depth-first."""
        collapsed = set(collapsed)
        order = []
        stack = [0]
        while stack:
            node = stack.pop()
            order.append(node)
            if self.feature[node] >= 0 and node not in collapsed:
                stack.append(self.right[node])
                stack.append(self.left[node])
        new_id = {old: i for i, old in enumerate(order)}
        idx = np.asarray(order, dtype=np.int64)
        internal = np.array([self.feature[o] >= 0 and o not in collapsed for o in order], dtype=bool)
        left = np.array([new_id[self.left[o]] if keep else -1 for o, keep in zip(order, internal)], dtype=np.int64)
        right = np.array([new_id[self.right[o]] if keep else -1 for o, keep in zip(order, internal)], dtype=np.int64)
        threshold = self.threshold[idx].copy()
        threshold[~internal] = np.nan
        gain = self.gain[idx].copy()
        gain[~internal] = 0.0
        return DecisionTree(
            feature=np.where(internal, self.feature[idx], -1),
            threshold=threshold,
            left=left,
            right=right,
            value=self.value[idx].copy(),
            n_samples=self.n_samples[idx].copy(),
            missing_left=self.missing_left[idx] & internal,
            gain=gain,
            error=self.error[idx].copy(),
            left_categories=[self.left_categories[o] if keep else None for o, keep in zip(order, internal)],
            known_categories=[self.known_categories[o] if keep else None for o, keep in zip(order, internal)],
            flags=self.flags,
        )


def constant_tree(value, n_samples, error=0.0):
    return DecisionTree(
        feature=np.array([-1], dtype=np.int64),
        threshold=np.array([np.nan]),
        left=np.array([-1], dtype=np.int64),
        right=np.array([-1], dtype=np.int64),
        value=np.array([float(value)]),
        n_samples=np.array([int(n_samples)], dtype=np.int64),
        missing_left=np.array([False]),
        gain=np.array([0.0]),
        error=np.array([float(error)]),
        left_categories=[None],
        known_categories=[None],
    )


class _TreeBuilder:
    """
    Grows one tree. With labels only, splits maximise information gain and
    leaves hold the positive rate. With gradients/hessians (boosting), splits
    maximise the regularised Newton gain and leaves hold -G / (H + lambda).
    """

    def __init__(self, X, labels=None, grad=None, hess=None, max_depth=None, min_samples_leaf=1,
                 max_features=None, rng=None, categorical=None, reg_lambda=1.0):
        self.X = X
        self.labels = labels
        self.grad = grad
        self.hess = hess
        self.newton = grad is not None
        self.max_depth = max_depth if max_depth is not None else 10 ** 6
        self.min_samples_leaf = max(1, int(min_samples_leaf))
        self.max_features = max_features
        self.rng = rng
        self.categorical = categorical if categorical is not None else np.zeros(X.shape[1], dtype=bool)
        self.reg_lambda = reg_lambda
        self.nodes = []

    def build(self, idx):
        self._grow(np.asarray(idx, dtype=np.int64), 0)
        n = len(self.nodes)
        cols = list(zip(*self.nodes))
        return DecisionTree(
            feature=np.asarray(cols[0], dtype=np.int64),
            threshold=np.asarray(cols[1], dtype=np.float64),
            left=np.asarray(cols[2], dtype=np.int64),
            right=np.asarray(cols[3], dtype=np.int64),
            value=np.asarray(cols[4], dtype=np.float64),
            n_samples=np.asarray(cols[5], dtype=np.int64),
            missing_left=np.asarray(cols[6], dtype=bool),
            gain=np.asarray(cols[7], dtype=np.float64),
            error=np.asarray(cols[8], dtype=np.float64),
            left_categories=[node[9] for node in self.nodes] if n else [],
            known_categories=[node[10] for node in self.nodes] if n else [],
        )

    def _leaf_stats(self, idx):
        if self.newton:
            value = -self.grad[idx].sum() / (self.hess[idx].sum() + self.reg_lambda)
            return value, 0.0, True
        pos = float(self.labels[idx].sum())
        n = idx.size
        return pos / n, min(pos, n - pos), 0 < pos < n

    def _grow(self, idx, depth):
        node_id = len(self.nodes)
        value, error, impure = self._leaf_stats(idx)
        # feature, threshold, left, right, value, n, missing_left, gain, error, left_cats, known_cats
        self.nodes.append([-1, np.nan, -1, -1, value, idx.size, False, 0.0, error, None, None])
        if depth >= self.max_depth or idx.size < 2 * self.min_samples_leaf or not impure:
            return node_id
        split = self._best_split(idx)
        if split is None:
            return node_id
        f, threshold, left_cats, known, gain = split
        x = self.X[idx, f]
        missing = np.isnan(x)
        if left_cats is not None:
            go_left = np.isin(x, left_cats)
        else:
            go_left = x <= threshold
        go_left &= ~missing
        n_left, n_right = int(go_left.sum()), int((~go_left & ~missing).sum())
        missing_left = n_left >= n_right
        if missing_left:
            go_left |= missing
        record = self.nodes[node_id]
        record[0], record[1] = f, (np.nan if left_cats is not None else threshold)
        record[6], record[7] = missing_left, gain * idx.size
        record[9], record[10] = left_cats, known
        record[2] = self._grow(idx[go_left], depth + 1)
        record[3] = self._grow(idx[~go_left], depth + 1)
        return node_id

    def _candidate_features(self):
        p = self.X.shape[1]
        if self.max_features is None or self.max_features >= p:
            return range(p)
        chosen = self.rng.choice(p, size=self.max_features, replace=False)
        return sorted(int(c) for c in chosen)

    def _best_split(self, idx):
        best = None
        best_gain = 0.0 if self.newton else -np.inf
        msl = self.min_samples_leaf
        for f in self._candidate_features():
            x = self.X[idx, f]
            present = ~np.isnan(x)
            n_present = int(present.sum())
            if n_present < 2 * msl:
                continue
            rows = idx[present]
            xs = x[present]
            if self.categorical[f]:
                result = self._scan_categories(xs, rows)
            else:
                result = self._scan_thresholds(xs, rows)
            if result is None:
                continue
            gain, threshold, left_cats, known = result
            # C4.5-style discount for rows the feature cannot see
            gain *= n_present / idx.size
            if gain > best_gain:
                best_gain = gain
                best = (f, threshold, left_cats, known, gain)
        return best

    def _score_prefixes(self, n_left, stat_left, n_total, stat_total, hess_left=None, hess_total=None):
        """Gain of every prefix split; `stat` is the positive count (entropy) or gradient sum (newton)."""
        n_right = n_total - n_left
        if self.newton:
            lam = self.reg_lambda
            g_right = stat_total - stat_left
            h_right = hess_total - hess_left
            return (stat_left ** 2 / (hess_left + lam) + g_right ** 2 / (h_right + lam)
                    - stat_total ** 2 / (hess_total + lam))
        parent = _entropy(stat_total / n_total)
        with np.errstate(divide="ignore", invalid="ignore"):
            child = (n_left * _entropy(stat_left / n_left)
                     + n_right * _entropy((stat_total - stat_left) / n_right)) / n_total
        return parent - child

    def _targets(self, rows):
        if self.newton:
            return self.grad[rows], self.hess[rows]
        return self.labels[rows].astype(np.float64), None

    def _scan_thresholds(self, xs, rows):
        order = np.argsort(xs, kind="mergesort")
        xs = xs[order]
        stat, hess = self._targets(rows[order])
        n = xs.size
        n_left = np.arange(1, n, dtype=np.float64)
        valid = (xs[:-1] < xs[1:]) & (n_left >= self.min_samples_leaf) & (n - n_left >= self.min_samples_leaf)
        if not valid.any():
            return None
        cum = np.cumsum(stat)[:-1]
        cum_h = np.cumsum(hess)[:-1] if hess is not None else None
        gains = self._score_prefixes(n_left, cum, n, stat.sum(), cum_h, None if hess is None else hess.sum())
        gains = np.where(valid, gains, -np.inf)
        i = int(np.argmax(gains))
        threshold = (xs[i] + xs[i + 1]) / 2.0
        if not xs[i] <= threshold < xs[i + 1]:
            threshold = xs[i]
        return float(gains[i]), float(threshold), None, None

    def _scan_categories(self, xs, rows):
        stat, hess = self._targets(rows)
        cats, inverse = np.unique(xs, return_inverse=True)
        if cats.size < 2:
            return None
        counts = np.bincount(inverse).astype(np.float64)
        sums = np.bincount(inverse, weights=stat)
        hsums = np.bincount(inverse, weights=hess) if hess is not None else None
        # Ordering categories by their response makes the best prefix the best subset.
        response = sums / (hsums + self.reg_lambda) if hess is not None else sums / counts
        order = np.lexsort((cats, response))
        counts, sums = counts[order], sums[order]
        n_left = np.cumsum(counts)[:-1]
        cum = np.cumsum(sums)[:-1]
        cum_h = np.cumsum(hsums[order])[:-1] if hsums is not None else None
        total = counts.sum()
        valid = (n_left >= self.min_samples_leaf) & (total - n_left >= self.min_samples_leaf)
        if not valid.any():
            return None
        gains = self._score_prefixes(n_left, cum, total, sums.sum(), cum_h, None if hsums is None else hsums.sum())
        gains = np.where(valid, gains, -np.inf)
        i = int(np.argmax(gains))
        left = tuple(sorted(float(c) for c in cats[order][: i + 1]))
        known = tuple(float(c) for c in cats)
        return float(gains[i]), np.nan, left, known


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------

@dataclass
class TreeEnsemble:
    """
    kind 'single' and 'forest' output the mean leaf probability of their trees;
    kind 'boosted' outputs sigmoid(init_score + sum(weight_t * tree_t(x))).
    """
    kind: str
    trees: List[DecisionTree]
    n_features: int
    params: dict = field(default_factory=dict)
    init_score: float = 0.0
    tree_weights: List[float] = field(default_factory=list)
    seeds: List[int] = field(default_factory=list)
    feature_names: Tuple[str, ...] = ()
    flags: Tuple[str, ...] = ()
    training_loss: List[float] = field(default_factory=list)
    # Counts from predictions made in this process only; a copy in a worker process does not report back.
    diagnostics: dict = field(default_factory=dict, compare=False)

    def terms(self):
        """(offset, [(coefficient, tree)]) such that raw output = offset + sum(coef * tree value)."""
        if self.kind == "boosted":
            return self.init_score, list(zip(self.tree_weights, self.trees))
        coef = 1.0 / len(self.trees)
        return 0.0, [(coef, tree) for tree in self.trees]

    def raw_output(self, X):
        """Probability for single/forest models, log-odds for boosted models."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ContractError(f"expected {self.n_features} features, got {X.shape[1]}")
        offset, terms = self.terms()
        out = np.full(X.shape[0], offset, dtype=np.float64)
        for coef, tree in terms:
            out += coef * tree.predict_value(X, self.diagnostics)
        return out

    def predict_proba(self, X):
        raw = self.raw_output(X)
        if self.kind == "boosted":
            return expit(raw)
        return np.clip(raw, 0.0, 1.0)

    def predict(self, X, threshold=0.5):
        return (self.predict_proba(X) >= threshold).astype(np.int64)

    def to_json(self, provenance=None):
        payload = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "n_features": self.n_features,
            "params": self.params,
            "init_score": self.init_score,
            "tree_weights": list(self.tree_weights),
            "seeds": list(self.seeds),
            "feature_names": list(self.feature_names),
            "flags": list(self.flags),
            "training_loss": list(self.training_loss),
            "trees": [t.to_dict() for t in self.trees],
        }
        if provenance is not None:
            payload["provenance"] = provenance
        return json.dumps(payload, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        if raw.get("format") != FORMAT_NAME:
            raise ContractError("not a serialized tree ensemble")
        if raw.get("version") != FORMAT_VERSION:
            raise ContractError(f"unsupported model format version {raw.get('version')}")
        return cls(
            kind=raw["kind"],
            trees=[DecisionTree.from_dict(t) for t in raw["trees"]],
            n_features=raw["n_features"],
            params=raw["params"],
            init_score=raw["init_score"],
            tree_weights=list(raw["tree_weights"]),
            seeds=list(raw["seeds"]),
            feature_names=tuple(raw["feature_names"]),
            flags=tuple(raw["flags"]),
            training_loss=list(raw["training_loss"]),
        )

    def save(self, path, provenance=None):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json(provenance))
        logger.info(f"Saved {self.kind} model ({len(self.trees)} trees) to {path}")

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(f.read())


def predict_proba(m, record):
    """Positive-class probability for a single encoded record."""
    return float(m.predict_proba(np.asarray(record, dtype=np.float64).reshape(1, -1))[0])


def log_loss(labels, raw_scores):
    signs = 2.0 * np.asarray(labels, dtype=np.float64) - 1.0
    return float(np.mean(np.logaddexp(0.0, -signs * raw_scores)))


def _resolve_max_features(value, p):
    if value in (None, "all"):
        return None
    if value == "sqrt":
        return max(1, int(math.sqrt(p)))
    if value == "log2":
        return max(1, int(math.log2(p))) if p > 1 else 1
    return max(1, min(p, int(value)))


def _fit_forest_tree(task):
    X, y, params, seed, categorical = task
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    sample = rng.integers(0, n, size=n)
    builder = _TreeBuilder(
        X, labels=y, max_depth=params.get("max_depth"), min_samples_leaf=params.get("min_samples_leaf", 1),
        max_features=_resolve_max_features(params.get("max_features", "sqrt"), X.shape[1]),
        rng=rng, categorical=categorical)
    tree = builder.build(sample)
    if params.get("prune"):
        out_of_bag = np.setdiff1d(np.arange(n), sample)
        tree = prune(tree, X[out_of_bag], y[out_of_bag])
    return tree


def fit(X, y, family="tree", params=None, seed=0, categorical=None, feature_names=(), workers=1):
    """
    Train a tree model on an encoded matrix.

    Single-class training labels give a constant model (probability = class rate)
    flagged 'single_class'.
    """
    if family not in MODEL_FAMILIES:
        raise ContractError(f"unknown model family '{family}'")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.size or y.size == 0:
        raise ContractError("fit needs a non-empty 2-D matrix with one label per row")
    merged = dict(DEFAULT_PARAMS[family])
    merged.update(params or {})
    p = X.shape[1]
    cat_mask = np.zeros(p, dtype=bool) if categorical is None else np.asarray(categorical, dtype=bool)

    rate = float(y.mean())
    if rate in (0.0, 1.0):
        logger.warning(f"Training labels contain a single class ({int(rate)}); returning a constant model")
        tree = constant_tree(rate, y.size)
        return TreeEnsemble("single", [tree], p, merged, feature_names=tuple(feature_names),
                            flags=("single_class",))

    if family == "tree":
        rng = np.random.default_rng(stable_seed(seed, "tree"))
        rows = np.arange(y.size)
        holdout = np.array([], dtype=np.int64)
        if merged.get("prune"):
            shuffled = rng.permutation(y.size)
            n_hold = int(round(TREE_HOLDOUT_FRACTION * y.size))
            holdout, rows = np.sort(shuffled[:n_hold]), np.sort(shuffled[n_hold:])
        builder = _TreeBuilder(X, labels=y, max_depth=merged.get("max_depth"),
                               min_samples_leaf=merged.get("min_samples_leaf", 1), categorical=cat_mask)
        tree = builder.build(rows)
        if merged.get("prune"):
            tree = prune(tree, X[holdout], y[holdout])
        logger.debug(f"Fitted tree: {tree.n_nodes} nodes, depth {tree.depth()}")
        return TreeEnsemble("single", [tree], p, merged, seeds=[seed], feature_names=tuple(feature_names))

    if family == "forest":
        n_trees = int(merged["n_estimators"])
        seeds = [stable_seed(seed, "forest", i) for i in range(n_trees)]
        trees = parallel_map(_fit_forest_tree, [(X, y, merged, s, cat_mask) for s in seeds], workers)
        logger.debug(f"Fitted forest of {n_trees} trees")
        return TreeEnsemble("forest", trees, p, merged, seeds=seeds, feature_names=tuple(feature_names))

    return _fit_boosted(X, y, merged, seed, cat_mask, feature_names)


def _fit_boosted(X, y, params, seed, categorical, feature_names):
    rate = float(y.mean())
    init = math.log(rate / (1.0 - rate))
    raw = np.full(y.size, init)
    loss = log_loss(y, raw)
    trees, weights, history = [], [], [loss]
    lr = float(params["learning_rate"])
    rows = np.arange(y.size)
    for round_no in range(int(params["n_estimators"])):
        prob = expit(raw)
        grad = prob - y
        hess = prob * (1.0 - prob)
        builder = _TreeBuilder(X, grad=grad, hess=hess, max_depth=params.get("max_depth"),
                               min_samples_leaf=params.get("min_samples_leaf", 1), categorical=categorical,
                               reg_lambda=float(params.get("reg_lambda", 1.0)))
        tree = builder.build(rows)
        step = tree.predict_value(X)
        weight = lr
        for _ in range(30):
            candidate = raw + weight * step
            new_loss = log_loss(y, candidate)
            if new_loss <= loss:
                break
            weight /= 2.0
        else:
            logger.debug(f"Boosting round {round_no}: no loss-reducing step, weight set to 0")
            weight, candidate, new_loss = 0.0, raw, loss
        trees.append(tree)
        weights.append(weight)
        raw, loss = candidate, new_loss
        history.append(loss)
    logger.debug(f"Fitted boosted model: {len(trees)} rounds, final training log-loss {loss:.5f}")
    return TreeEnsemble("boosted", trees, X.shape[1], params, init_score=init, tree_weights=weights,
                        seeds=[seed], feature_names=tuple(feature_names), training_loss=history)


# ---------------------------------------------------------------------------
# Pruning
# ---------------------------------------------------------------------------

def cost_complexity_path(tree):
    """
    Weakest-link pruning sequence. Returns [(alpha, collapsed node set)], starting
    with (0.0, {}) for the unpruned tree and ending with the root alone.
    """
    n_total = float(tree.n_samples[0])
    collapsed = set()
    path = [(0.0, frozenset())]

    def subtree_stats(node):
        if tree.feature[node] < 0 or node in collapsed:
            return tree.error[node] / n_total, 1
        err_l, leaves_l = subtree_stats(tree.left[node])
        err_r, leaves_r = subtree_stats(tree.right[node])
        return err_l + err_r, leaves_l + leaves_r

    while tree.feature[0] >= 0 and 0 not in collapsed:
        candidates = []
        stack = [0]
        while stack:
            node = stack.pop()
            if tree.feature[node] < 0 or node in collapsed:
                continue
            sub_err, leaves = subtree_stats(node)
            g = (tree.error[node] / n_total - sub_err) / (leaves - 1)
            candidates.append((g, node))
            stack.extend((tree.left[node], tree.right[node]))
        alpha = min(g for g, _ in candidates)
        for g, node in candidates:
            if g <= alpha + 1e-12:
                collapsed.add(node)
        path.append((max(alpha, 0.0), frozenset(collapsed)))
    return path


def prune(t, holdout_X, holdout_y, alphas=None):
    """
    Cost-complexity post-pruning: among the subtrees on the weakest-link path
    (restricted to `alphas` when given), keep the one with the best holdout
    accuracy; ties go to the smaller tree. An empty holdout returns the tree
    unchanged, flagged 'empty_holdout'.
    """
    holdout_y = np.asarray(holdout_y, dtype=np.int64)
    if holdout_y.size == 0:
        logger.warning("Pruning skipped: empty holdout")
        return DecisionTree(**{**t.__dict__, "flags": t.flags + ("empty_holdout",)})
    holdout_X = np.asarray(holdout_X, dtype=np.float64)
    path = cost_complexity_path(t)
    if alphas is not None:
        chosen = []
        for a in sorted(alphas):
            eligible = [step for step in path if step[0] <= a + 1e-12]
            chosen.append(eligible[-1])
        path = chosen
    best_tree, best_acc = None, -1.0
    for alpha, collapsed in path:
        candidate = t.subtree(collapsed) if collapsed else t
        acc = float(np.mean((candidate.predict_value(holdout_X) >= 0.5) == holdout_y))
        if acc > best_acc or (acc == best_acc and candidate.n_nodes < best_tree.n_nodes):
            best_tree, best_acc = candidate, acc
    logger.debug(f"Pruned tree from {t.n_nodes} to {best_tree.n_nodes} nodes (holdout accuracy {best_acc:.4f})")
    return best_tree


def split_gain_importance(m):
    """Sample-weighted split gain per input column, normalised to sum to 1 (zeros if no splits)."""
    totals = np.zeros(m.n_features)
    _, terms = m.terms()
    for coef, tree in terms:
        internal = tree.feature >= 0
        np.add.at(totals, tree.feature[internal], abs(coef) * tree.gain[internal])
    s = totals.sum()
    return totals / s if s > 0 else totals


def best_split_gain(x, labels, categorical=False):
    """Information gain of the best single split on one column (0 when no split is possible)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    labels = np.asarray(labels, dtype=np.int64)
    builder = _TreeBuilder(x, labels=labels, categorical=np.array([categorical]))
    split = builder._best_split(np.arange(labels.size))
    return max(split[4], 0.0) if split is not None else 0.0
