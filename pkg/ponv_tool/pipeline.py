"""
Preprocessing operators and the runnable pipeline a genome describes:
encode -> impute -> scale -> select -> tree model.

Every operator learns its parameters from the training cohort only; transform()
replays them on any other cohort.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import model as tree_model
from .dataset import encode_features
from .errors import ContractError

logger = logging.getLogger(__name__)

IMPUTERS = ("median", "zero", "indicator")
SCALERS = ("none", "standard", "minmax")
ENCODINGS = ("onehot", "ordinal")


def _mode(values):
    present = values[~np.isnan(values)]
    if present.size == 0:
        return 0.0
    uniques, counts = np.unique(present, return_counts=True)
    return float(uniques[np.argmax(counts)])


def _median(values):
    present = values[~np.isnan(values)]
    return float(np.median(present)) if present.size else 0.0


@dataclass
class Imputer:
    """median: median for continuous columns, mode otherwise. zero: 0. indicator: median/mode plus a was-missing column."""
    kind: str = "median"
    fill: Optional[np.ndarray] = None
    indicator_columns: Tuple[int, ...] = ()

    def fit(self, X, kinds):
        if self.kind not in IMPUTERS:
            raise ContractError(f"unknown imputer '{self.kind}'")
        if self.kind == "zero":
            self.fill = np.zeros(X.shape[1])
        else:
            self.fill = np.array([_median(X[:, j]) if kinds[j] == "continuous" else _mode(X[:, j])
                                  for j in range(X.shape[1])])
        if self.kind == "indicator":
            self.indicator_columns = tuple(int(j) for j in np.flatnonzero(np.isnan(X).any(axis=0)))
        return self

    def transform(self, X):
        missing = np.isnan(X)
        out = np.where(missing, self.fill[None, :], X)
        if self.indicator_columns:
            out = np.column_stack([out, missing[:, list(self.indicator_columns)].astype(np.float64)])
        return out


@dataclass
class Scaler:
    kind: str = "none"
    offset: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None

    def fit(self, X):
        if self.kind not in SCALERS:
            raise ContractError(f"unknown scaler '{self.kind}'")
        p = X.shape[1]
        if self.kind == "standard":
            self.offset = X.mean(axis=0) if X.shape[0] else np.zeros(p)
            sd = X.std(axis=0) if X.shape[0] else np.ones(p)
            self.scale = np.where(sd > 0, sd, 1.0)
        elif self.kind == "minmax":
            self.offset = X.min(axis=0) if X.shape[0] else np.zeros(p)
            span = (X.max(axis=0) - self.offset) if X.shape[0] else np.ones(p)
            self.scale = np.where(span > 0, span, 1.0)
        else:
            self.offset, self.scale = np.zeros(p), np.ones(p)
        return self

    def exempt(self, mask):
        """Leave the masked columns (category codes) untouched."""
        mask = np.asarray(mask, dtype=bool)
        self.offset = np.where(mask, 0.0, self.offset)
        self.scale = np.where(mask, 1.0, self.scale)
        return self

    def transform(self, X):
        return (X - self.offset) / self.scale


@dataclass
class Selector:
    """Keep the top-m columns by best single-split information gain (all when m is None)."""
    top: Optional[int] = None
    columns: Tuple[int, ...] = ()
    gains: Optional[np.ndarray] = None

    def fit(self, X, labels, categorical):
        p = X.shape[1]
        if self.top is None or self.top >= p:
            self.columns = tuple(range(p))
            return self
        self.gains = np.array([tree_model.best_split_gain(X[:, j], labels, categorical[j]) for j in range(p)])
        # stable sort: equal gains keep column order
        ranked = np.argsort(-self.gains, kind="mergesort")[:self.top]
        self.columns = tuple(sorted(int(j) for j in ranked))
        return self

    def transform(self, X):
        return X[:, list(self.columns)]


@dataclass
class Pipeline:
    imputer: str = "median"
    scaler: str = "none"
    selector: Optional[int] = None
    family: str = "tree"
    params: dict = field(default_factory=dict)
    encoding: str = "onehot"

    def fit(self, d, target, seed=0, workers=1):
        if self.encoding not in ENCODINGS:
            raise ContractError(f"unknown encoding '{self.encoding}'")
        encoded = encode_features(d, mode=self.encoding)
        labels = d.target(target)
        X = encoded.matrix
        imputer = Imputer(self.imputer).fit(X, encoded.kinds)
        X = imputer.transform(X)
        names = list(encoded.names) + [f"{encoded.names[j]}_missing" for j in imputer.indicator_columns]
        sources = list(encoded.sources) + [encoded.sources[j] for j in imputer.indicator_columns]
        categorical = list(encoded.categorical) + [False] * len(imputer.indicator_columns)
        scaler = Scaler(self.scaler).fit(X).exempt(categorical)
        X = scaler.transform(X)
        selector = Selector(self.selector).fit(X, labels, categorical)
        X = selector.transform(X)
        cols = list(selector.columns)
        fitted_model = tree_model.fit(
            X, labels, family=self.family, params=self.params, seed=seed,
            categorical=[categorical[j] for j in cols], feature_names=[names[j] for j in cols], workers=workers)
        logger.debug(f"Fitted pipeline {self.family} on {X.shape[0]} rows x {X.shape[1]} columns")
        return FittedPipeline(self, imputer, scaler, selector, fitted_model,
                              tuple(names[j] for j in cols), tuple(sources[j] for j in cols),
                              tuple(categorical[j] for j in cols))


@dataclass
class FittedPipeline:
    spec: Pipeline
    imputer: Imputer
    scaler: Scaler
    selector: Selector
    model: tree_model.TreeEnsemble
    feature_names: Tuple[str, ...]
    feature_sources: Tuple[str, ...]
    categorical: Tuple[bool, ...]
    description: str = ""

    def transform(self, d):
        X = encode_features(d, mode=self.spec.encoding).matrix
        X = self.imputer.transform(X)
        X = self.scaler.transform(X)
        return self.selector.transform(X)

    def predict_proba(self, d):
        return self.model.predict_proba(self.transform(d))

    def predict(self, d, threshold=0.5):
        return (self.predict_proba(d) >= threshold).astype(np.int64)
