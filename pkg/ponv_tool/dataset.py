"""
Patient dataset: schema declaration, CSV ingestion with validation, descriptive
statistics, correlation matrices and a synthetic generator with planted signal.
"""
import os
import math
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd
import yaml
from scipy.stats import rankdata

from .errors import ConfigError, ContractError, DataError, ParseError, RowRejectedError, RowRejection, SchemaError
from .utils import get_resource_path

logger = logging.getLogger(__name__)

KINDS = ("continuous", "binary", "categorical", "ordinal")
TASK_TARGETS = {"early": "PONV_PACU", "delayed": "PONV_24H"}
RECORD_ID = "RECORD_ID"
SCHEMA_FILE = "schema.yaml"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    unit: Optional[str] = None
    min: Optional[float] = None
    max: Optional[float] = None
    categories: Tuple = ()
    labels: Tuple = ()
    description: str = ""
    reference_mean: Optional[float] = None
    reference_sd: Optional[float] = None
    reference_pct: Optional[object] = None
    is_target: bool = False

    @property
    def is_numeric(self):
        return self.kind != "categorical"

    @property
    def value_set(self):
        """Allowed values for discrete kinds (binary is always {0, 1})."""
        if self.kind == "binary":
            return (0, 1)
        return self.categories


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature declarations; targets are entries flagged is_target."""
    entries: Tuple[FeatureSpec, ...]
    version: int = 1

    def __post_init__(self):
        seen = set()
        for spec in self.entries:
            if not spec.name:
                raise SchemaError("<unnamed>", "feature names must be non-empty")
            if spec.name in seen:
                raise SchemaError(spec.name, "duplicate feature name")
            seen.add(spec.name)
            if spec.kind not in KINDS:
                raise SchemaError(spec.name, f"unknown kind '{spec.kind}'")
            if spec.kind == "continuous":
                if spec.min is None or spec.max is None or not (math.isfinite(spec.min) and math.isfinite(spec.max)):
                    raise SchemaError(spec.name, "continuous features need a finite [min, max] range")
                if spec.min > spec.max:
                    raise SchemaError(spec.name, f"min {spec.min} exceeds max {spec.max}")
            if spec.kind in ("categorical", "ordinal"):
                if not spec.categories or len(set(spec.categories)) != len(spec.categories):
                    raise SchemaError(spec.name, "categorical features need a non-empty set of distinct categories")
            if spec.is_target and spec.kind != "binary":
                raise SchemaError(spec.name, "targets must be binary")
        for target in TASK_TARGETS.values():
            if target not in seen:
                raise SchemaError(target, "target missing from schema")
            if not self[target].is_target:
                raise SchemaError(target, "declared as a feature, expected a target")

    def __getitem__(self, name):
        for spec in self.entries:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def __contains__(self, name):
        return any(spec.name == name for spec in self.entries)

    @property
    def names(self):
        return [spec.name for spec in self.entries]

    @property
    def feature_names(self):
        return [spec.name for spec in self.entries if not spec.is_target]

    @property
    def target_names(self):
        return [spec.name for spec in self.entries if spec.is_target]

    def subset(self, names):
        """Schema keeping the listed features (in schema order) plus all targets."""
        keep = set(names)
        missing = keep - set(self.feature_names)
        if missing:
            raise SchemaError(sorted(missing)[0], "not a feature of this schema")
        return FeatureSchema(tuple(s for s in self.entries if s.is_target or s.name in keep), self.version)

    def without(self, names):
        drop = set(names)
        return FeatureSchema(tuple(s for s in self.entries if s.is_target or s.name not in drop), self.version)

    def with_feature(self, spec):
        features = [s for s in self.entries if not s.is_target]
        targets = [s for s in self.entries if s.is_target]
        return FeatureSchema(tuple(features + [spec] + targets), self.version)


def _spec_from_dict(raw, is_target=False):
    pct = raw.get("reference_pct")
    if isinstance(pct, list):
        pct = tuple(float(p) for p in pct)
    return FeatureSpec(
        name=str(raw["name"]),
        kind=raw["kind"],
        unit=raw.get("unit"),
        min=None if raw.get("min") is None else float(raw["min"]),
        max=None if raw.get("max") is None else float(raw["max"]),
        categories=tuple(raw.get("categories", ())),
        labels=tuple(raw.get("labels", ())),
        description=raw.get("description", ""),
        reference_mean=raw.get("reference_mean"),
        reference_sd=raw.get("reference_sd"),
        reference_pct=pct,
        is_target=is_target,
    )


def load_schema(path):
    """Read a YAML schema declaration."""
    logger.info(f"Loading schema from: {path}")
    with open(path, "r", encoding="utf-8") as f:
        raw = yaml.safe_load(f)
    if not isinstance(raw, dict) or "features" not in raw or "targets" not in raw:
        raise SchemaError(path, "schema file needs 'features' and 'targets' sections")
    entries = [_spec_from_dict(r) for r in raw["features"]]
    entries += [_spec_from_dict(r, is_target=True) for r in raw["targets"]]
    schema = FeatureSchema(tuple(entries), int(raw.get("version", 1)))
    logger.debug(f"Schema v{schema.version}: {len(schema.feature_names)} features, targets {schema.target_names}")
    return schema


def default_schema():
    return load_schema(get_resource_path(SCHEMA_FILE))


class Dataset:
    """
    Immutable table of patient records typed by a FeatureSchema.

    Numeric kinds (continuous, binary, ordinal) are stored as float64 with NaN for
    missing; categorical values are strings with None for missing. Targets never
    contain missing values.
    """

    def __init__(self, schema, frame, record_ids=None):
        if list(frame.columns) != schema.names:
            missing = [c for c in schema.names if c not in frame.columns]
            if missing:
                raise SchemaError(missing[0], "column missing from data")
            extra = [c for c in frame.columns if c not in schema.names]
            if extra:
                raise SchemaError(extra[0], "column not declared in schema")
            frame = frame[schema.names]
        frame = frame.reset_index(drop=True).copy()
        rejections = _validate_frame(schema, frame)
        if rejections:
            raise RowRejectedError(rejections)
        self._schema = schema
        self._frame = frame
        if record_ids is None:
            record_ids = np.arange(len(frame), dtype=np.int64)
        record_ids = np.asarray(record_ids, dtype=np.int64).copy()
        if len(record_ids) != len(frame):
            raise ContractError("record_ids length must match the number of rows")
        record_ids.setflags(write=False)
        self._record_ids = record_ids

    @property
    def schema(self):
        return self._schema

    @property
    def record_ids(self):
        return self._record_ids

    @property
    def n_rows(self):
        return len(self._frame)

    def __len__(self):
        return len(self._frame)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self._schema == other._schema
                and np.array_equal(self._record_ids, other._record_ids)
                and self._frame.equals(other._frame))

    @property
    def frame(self):
        """A copy of the underlying table."""
        return self._frame.copy()

    def column(self, name):
        values = self._frame[name].to_numpy(copy=True)
        if self._schema[name].is_numeric:
            values = values.astype(np.float64)
        values.setflags(write=False)
        return values

    def target(self, name):
        if name not in self._schema.target_names:
            raise ContractError(f"{name} is not a target")
        return self._frame[name].to_numpy(dtype=np.int64)

    def take(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self._schema, self._frame.iloc[indices], self._record_ids[indices])

    def drop(self, names):
        names = list(names)
        return Dataset(self._schema.without(names), self._frame.drop(columns=names), self._record_ids)

    def select(self, names):
        schema = self._schema.subset(names)
        return Dataset(schema, self._frame[schema.names], self._record_ids)

    def with_feature(self, spec, values):
        schema = self._schema.with_feature(spec)
        frame = self._frame.copy()
        frame[spec.name] = values
        return Dataset(schema, frame[schema.names], self._record_ids)

    def to_csv(self, path):
        """Write UTF-8 CSV: RECORD_ID first, empty cells for missing, 0/1 booleans."""
        out = pd.DataFrame({RECORD_ID: self._record_ids})
        for spec in self._schema.entries:
            col = self._frame[spec.name]
            if spec.kind in ("binary", "ordinal"):
                out[spec.name] = col.astype("Int64")
            else:
                out[spec.name] = col
        out.to_csv(path, index=False, na_rep="", encoding="utf-8")
        logger.info(f"Wrote {self.n_rows} records to {path}")


def _validate_frame(schema, frame):
    rejections = []
    for spec in schema.entries:
        col = frame[spec.name]
        if spec.is_target:
            for row in np.flatnonzero(col.isna().to_numpy()):
                rejections.append(RowRejection(int(row), spec.name, "missing target value"))
        if spec.kind == "continuous":
            values = col.to_numpy(dtype=np.float64)
            bad = ~np.isnan(values) & ((values < spec.min) | (values > spec.max))
            for row in np.flatnonzero(bad):
                rejections.append(RowRejection(
                    int(row), spec.name, f"{values[row]} outside range [{spec.min:g}, {spec.max:g}]"))
        elif spec.kind in ("binary", "ordinal"):
            values = col.to_numpy(dtype=np.float64)
            allowed = np.asarray(spec.value_set, dtype=np.float64)
            bad = ~np.isnan(values) & ~np.isin(values, allowed)
            for row in np.flatnonzero(bad):
                rejections.append(RowRejection(
                    int(row), spec.name, f"{values[row]:g} not in {list(spec.value_set)}"))
        else:
            allowed = set(spec.categories)
            for row, value in enumerate(col):
                if value is not None and not (isinstance(value, float) and math.isnan(value)) and value not in allowed:
                    rejections.append(RowRejection(row, spec.name, f"category {value!r} not declared"))
    rejections.sort(key=lambda r: (r.row, r.column))
    return rejections


def load_csv(path, schema, on_reject="raise"):
    """
    Load a CSV file whose header matches the schema names (any order).

    Empty cells become missing. Hard validation failures (range, category set,
    missing target) raise RowRejectedError listing every rejected row, or with
    on_reject="drop" the rows are dropped and logged.
    """
    if not os.path.exists(path):
        raise ContractError(f"data file not found: {path}")
    logger.info(f"Loading dataset from: {path}")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except UnicodeDecodeError as e:
        raise DataError(f"{path} is not valid UTF-8: {e}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot read {path} as CSV: {e}") from e
    raw.columns = [c.strip() for c in raw.columns]

    for name in schema.names:
        if name not in raw.columns:
            raise SchemaError(name, "column missing from data")
    for name in raw.columns:
        if name != RECORD_ID and name not in schema:
            raise SchemaError(name, "column not declared in schema")

    frame = pd.DataFrame(index=raw.index)
    for spec in schema.entries:
        cells = raw[spec.name].str.strip()
        empty = cells == ""
        if spec.is_numeric:
            parsed = pd.to_numeric(cells.where(~empty, None), errors="coerce")
            unparsed = ~empty & parsed.isna()
            if unparsed.any():
                row = int(np.flatnonzero(unparsed.to_numpy())[0])
                raise ParseError(row, spec.name, cells.iloc[row])
            frame[spec.name] = parsed.astype(np.float64)
        else:
            frame[spec.name] = cells.where(~empty, None).astype(object)

    if RECORD_ID in raw.columns:
        ids = pd.to_numeric(raw[RECORD_ID], errors="coerce")
        if ids.isna().any():
            row = int(np.flatnonzero(ids.isna().to_numpy())[0])
            raise ParseError(row, RECORD_ID, raw[RECORD_ID].iloc[row])
        record_ids = ids.to_numpy(dtype=np.int64)
    else:
        record_ids = np.arange(len(frame), dtype=np.int64)

    rejections = _validate_frame(schema, frame)
    if rejections:
        if on_reject != "drop":
            for r in rejections[:10]:
                logger.error(f"Rejected row {r.row}: {r.column} {r.reason}")
            raise RowRejectedError(rejections)
        bad_rows = sorted({r.row for r in rejections})
        logger.warning(f"Dropping {len(bad_rows)} rejected rows (first: row {bad_rows[0]}, "
                       f"{rejections[0].column} {rejections[0].reason})")
        keep = np.setdiff1d(np.arange(len(frame)), bad_rows)
        frame = frame.iloc[keep]
        record_ids = record_ids[keep]
        if frame.empty:
            raise RowRejectedError(rejections)

    dataset = Dataset(schema, frame, record_ids)
    logger.info(f"Loaded {dataset.n_rows} records with {len(schema.feature_names)} features")
    return dataset


# ---------------------------------------------------------------------------
# Descriptive statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContinuousStats:
    name: str
    n: int
    min: float = float("nan")
    max: float = float("nan")
    mean: float = float("nan")
    sd: float = float("nan")
    median: float = float("nan")
    no_data: bool = False

    def __eq__(self, other):
        if not isinstance(other, ContinuousStats):
            return NotImplemented
        mine = (self.min, self.max, self.mean, self.sd, self.median)
        theirs = (other.min, other.max, other.mean, other.sd, other.median)
        same = all(a == b or (math.isnan(a) and math.isnan(b)) for a, b in zip(mine, theirs))
        return same and (self.name, self.n, self.no_data) == (other.name, other.n, other.no_data)


@dataclass(frozen=True)
class CategoricalStats:
    name: str
    n: int
    counts: Tuple[Tuple[object, int], ...] = ()
    percentages: Tuple[Tuple[object, float], ...] = ()
    no_data: bool = False


@dataclass(frozen=True)
class StatsTable:
    total_rows: int
    continuous: Tuple[ContinuousStats, ...]
    categorical: Tuple[CategoricalStats, ...]

    def __getitem__(self, name):
        for entry in self.continuous + self.categorical:
            if entry.name == name:
                return entry
        raise KeyError(name)

    def to_frame(self):
        rows = []
        for s in self.continuous:
            rows.append({"feature": s.name, "kind": "continuous", "value": "", "n": s.n,
                         "min": s.min, "max": s.max, "mean": s.mean, "sd": s.sd, "median": s.median,
                         "count": "", "percentage": "", "note": "no data" if s.no_data else ""})
        for s in self.categorical:
            if s.no_data:
                rows.append({"feature": s.name, "kind": "categorical", "value": "", "n": 0, "note": "no data"})
                continue
            pct = dict(s.percentages)
            for value, count in s.counts:
                rows.append({"feature": s.name, "kind": "categorical", "value": value, "n": s.n,
                             "count": count, "percentage": pct[value], "note": ""})
        columns = ["feature", "kind", "value", "n", "min", "max", "mean", "sd", "median", "count", "percentage", "note"]
        return pd.DataFrame(rows, columns=columns)


def descriptive_stats(d):
    """Per-feature statistics over non-missing values (sample SD, n-1 denominator)."""
    if d.n_rows == 0:
        raise ContractError("descriptive_stats needs a non-empty dataset")
    continuous, categorical = [], []
    for spec in d.schema.entries:
        values = d.column(spec.name)
        if spec.kind == "continuous":
            present = values[~np.isnan(values)]
            if present.size == 0:
                logger.warning(f"Feature {spec.name} has no data")
                continuous.append(ContinuousStats(spec.name, 0, no_data=True))
                continue
            sd = float(np.std(present, ddof=1)) if present.size > 1 else 0.0
            continuous.append(ContinuousStats(
                spec.name, int(present.size), float(present.min()), float(present.max()),
                float(np.mean(present)), sd, float(np.median(present))))
        else:
            if spec.is_numeric:
                present = [int(v) if float(v).is_integer() else v for v in values[~np.isnan(values)]]
            else:
                present = [v for v in values if v is not None]
            if not present:
                logger.warning(f"Feature {spec.name} has no data")
                categorical.append(CategoricalStats(spec.name, 0, no_data=True))
                continue
            counts = pd.Series(present).value_counts()
            ordered = [(v, int(counts.get(v, 0))) for v in spec.value_set]
            total = len(present)
            categorical.append(CategoricalStats(
                spec.name, total, tuple(ordered),
                tuple((v, 100.0 * c / total) for v, c in ordered)))
    return StatsTable(d.n_rows, tuple(continuous), tuple(categorical))


def subgroup_stats(d, target):
    """Descriptive statistics of the negative and positive subgroups of a target."""
    labels = d.target(target)
    groups = {}
    for value in (0, 1):
        idx = np.flatnonzero(labels == value)
        if idx.size == 0:
            logger.warning(f"Subgroup {target}={value} is empty")
            continue
        groups[value] = descriptive_stats(d.take(idx))
    return groups


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EncodedFeatures:
    """Numeric design matrix derived from a Dataset. NaN marks missing."""
    matrix: np.ndarray
    names: Tuple[str, ...]
    sources: Tuple[str, ...]
    kinds: Tuple[str, ...]
    categorical: Tuple[bool, ...]


def frequency_rank_codes(values, categories):
    """Most frequent category -> 0, next -> 1, ...; ties keep declaration order."""
    counts = {c: 0 for c in categories}
    for v in values:
        if v is not None:
            counts[v] += 1
    order = sorted(categories, key=lambda c: (-counts[c], categories.index(c)))
    code = {c: float(i) for i, c in enumerate(order)}
    return np.array([np.nan if v is None else code[v] for v in values], dtype=np.float64)


def encode_features(d, mode="onehot", include_targets=False):
    """
    Turn a Dataset into a float matrix.

    mode="correlation": one column per feature; unordered categoricals become
    frequency-rank codes. mode="onehot": unordered categoricals expand to one 0/1
    column per declared category. mode="ordinal": unordered categoricals become
    declaration-order codes flagged categorical (for subset splits).
    """
    if mode not in ("correlation", "onehot", "ordinal"):
        raise ContractError(f"unknown encoding mode '{mode}'")
    columns, names, sources, kinds, categorical = [], [], [], [], []
    for spec in d.schema.entries:
        if spec.is_target and not include_targets:
            continue
        values = d.column(spec.name)
        if spec.kind != "categorical":
            columns.append(values.astype(np.float64))
            names.append(spec.name)
            sources.append(spec.name)
            kinds.append(spec.kind)
            categorical.append(False)
        elif mode == "correlation":
            columns.append(frequency_rank_codes(list(values), list(spec.categories)))
            names.append(spec.name)
            sources.append(spec.name)
            kinds.append(spec.kind)
            categorical.append(False)
        elif mode == "ordinal":
            code = {c: float(i) for i, c in enumerate(spec.categories)}
            columns.append(np.array([np.nan if v is None else code[v] for v in values], dtype=np.float64))
            names.append(spec.name)
            sources.append(spec.name)
            kinds.append(spec.kind)
            categorical.append(True)
        else:
            missing = np.array([v is None for v in values])
            for category in spec.categories:
                col = np.array([v == category for v in values], dtype=np.float64)
                col[missing] = np.nan
                columns.append(col)
                names.append(f"{spec.name}={category}")
                sources.append(spec.name)
                kinds.append("binary")
                categorical.append(False)
    matrix = np.column_stack(columns) if columns else np.empty((d.n_rows, 0))
    return EncodedFeatures(matrix, tuple(names), tuple(sources), tuple(kinds), tuple(categorical))


# ---------------------------------------------------------------------------
# Correlation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationMatrix:
    names: Tuple[str, ...]
    values: np.ndarray
    method: str
    flagged: Tuple[Tuple[str, str], ...] = ()

    def to_frame(self):
        return pd.DataFrame(self.values, index=list(self.names), columns=list(self.names))


def _pearson(x, y):
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(np.dot(xc, xc)) * float(np.dot(yc, yc)))
    if denom == 0.0:
        return None
    return min(1.0, max(-1.0, float(np.dot(xc, yc)) / denom))


def correlation(d, method="pearson", include_targets=True):
    """
    Pairwise-complete correlation matrix over one numeric column per feature.

    Spearman is Pearson on fractional ranks (ties get the average rank), ranked
    within each pair's complete cases. Zero-variance pairs are recorded as 0 and
    flagged.
    """
    if method not in ("pearson", "spearman"):
        raise ContractError(f"unknown correlation method '{method}'")
    if d.n_rows < 2:
        raise ContractError("correlation needs at least 2 rows")
    encoded = encode_features(d, mode="correlation", include_targets=include_targets)
    x = encoded.matrix
    p = x.shape[1]
    present = ~np.isnan(x)
    values = np.zeros((p, p), dtype=np.float64)
    flagged = []
    for i in range(p):
        for j in range(i, p):
            both = present[:, i] & present[:, j]
            a, b = x[both, i], x[both, j]
            r = None
            if a.size >= 2:
                if method == "spearman":
                    a, b = rankdata(a), rankdata(b)
                r = _pearson(a, b)
            if r is None:
                flagged.append((encoded.names[i], encoded.names[j]))
                r = 0.0
            elif i == j:
                r = 1.0
            values[i, j] = values[j, i] = r
    if flagged:
        logger.warning(f"{len(flagged)} correlation cells had zero variance or too few complete pairs; set to 0")
    return CorrelationMatrix(encoded.names, values, method, tuple(flagged))


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

DEFAULT_INFORMATIVE = ("CRIST_MLKG", "FENT_MCGKG", "URINE_MLKG", "MORPH_MGKG", "PAIN_MOD")
NOISE_RANGE = 50.0


@dataclass(frozen=True)
class SynthConfig:
    n: int = 2000
    prevalence: float = 0.15
    delayed_prevalence: Optional[float] = None
    informative: Tuple[str, ...] = DEFAULT_INFORMATIVE
    signal_strength: float = 1.5
    noise_features: int = 0
    full_schema: bool = True
    missing_rate: float = 0.0

    def validate(self, schema):
        if self.n < 1:
            raise ConfigError("n", "must be >= 1")
        for name, value in (("prevalence", self.prevalence), ("delayed_prevalence", self.delayed_prevalence)):
            if value is not None and not 0.0 < value < 1.0:
                raise ConfigError(name, f"{value} outside (0, 1)")
        if self.noise_features < 0:
            raise ConfigError("noise_features", "must be >= 0")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ConfigError("missing_rate", f"{self.missing_rate} outside [0, 1)")
        for name in self.informative:
            if name not in schema.feature_names:
                raise ConfigError("informative", f"unknown feature {name}")


def _draw_feature(spec, n, rng):
    if spec.kind == "continuous":
        mean = spec.reference_mean if spec.reference_mean is not None else (spec.min + spec.max) / 2
        sd = spec.reference_sd if spec.reference_sd is not None else (spec.max - spec.min) / 6
        return np.clip(rng.normal(mean, sd, n), spec.min, spec.max)
    if spec.kind == "binary":
        p = (spec.reference_pct if spec.reference_pct is not None else 50.0) / 100.0
        return (rng.random(n) < p).astype(np.float64)
    weights = np.asarray(spec.reference_pct if spec.reference_pct is not None
                         else [1.0] * len(spec.categories), dtype=np.float64)
    idx = rng.choice(len(spec.categories), size=n, p=weights / weights.sum())
    if spec.kind == "ordinal":
        return np.asarray(spec.categories, dtype=np.float64)[idx]
    return np.array(spec.categories, dtype=object)[idx]


def _standardize_signal(spec, values):
    if spec.kind == "categorical":
        codes = frequency_rank_codes(list(values), list(spec.categories))
        # rarer categories carry the risk
        values = codes
    values = np.asarray(values, dtype=np.float64)
    sd = values.std()
    return (values - values.mean()) / sd if sd > 0 else np.zeros_like(values)


def _solve_intercept(signal, prevalence):
    """Bisection for b with mean(sigmoid(b + signal)) == prevalence."""
    lo, hi = -50.0, 50.0
    for _ in range(200):
        mid = (lo + hi) / 2
        rate = np.mean(1.0 / (1.0 + np.exp(-(mid + signal))))
        if rate < prevalence:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def synth_generate(config, seed, schema=None):
    """
    Reproducible synthetic cohort.

    Marginals follow the schema's reference numbers; both targets are Bernoulli
    draws from a logistic function of the standardized informative features, with
    intercepts solved so the expected positive rate equals the configured
    prevalence. Score columns are recomputed from their factor columns.
    """
    from .scores import DEFAULT_SCORES, SCORE_COLUMNS, score_dataset

    schema = schema or default_schema()
    config.validate(schema)
    rng = np.random.default_rng(seed)
    n = config.n
    logger.info(f"Generating synthetic dataset: n={n}, prevalence={config.prevalence}, "
                f"informative={list(config.informative)}, noise={config.noise_features}, seed={seed}")

    if not config.full_schema:
        schema = schema.subset(config.informative)
    data = {}
    for spec in schema.entries:
        if not spec.is_target:
            data[spec.name] = _draw_feature(spec, n, rng)

    for i in range(1, config.noise_features + 1):
        spec = FeatureSpec(name=f"NOISE_{i}", kind="continuous", min=-NOISE_RANGE, max=NOISE_RANGE,
                           description="Standard normal noise")
        schema = schema.with_feature(spec)
        data[spec.name] = np.clip(rng.standard_normal(n), -NOISE_RANGE, NOISE_RANGE)

    signal = np.zeros(n)
    for name in config.informative:
        signal += config.signal_strength * _standardize_signal(schema[name], data[name])

    delayed = config.delayed_prevalence if config.delayed_prevalence is not None else config.prevalence
    for target, prevalence in ((TASK_TARGETS["early"], config.prevalence), (TASK_TARGETS["delayed"], delayed)):
        b = _solve_intercept(signal, prevalence)
        prob = 1.0 / (1.0 + np.exp(-(b + signal)))
        data[target] = (rng.random(n) < prob).astype(np.float64)

    if config.missing_rate > 0:
        protected = set(config.informative) | {"AGE", "GENDER"}
        for spec in schema.entries:
            if spec.kind == "continuous" and not spec.is_target and spec.name not in protected:
                mask = rng.random(n) < config.missing_rate
                data[spec.name] = np.where(mask, np.nan, data[spec.name])

    frame = pd.DataFrame({name: data[name] for name in schema.names})
    dataset = Dataset(schema, frame)

    if all(c in schema for c in SCORE_COLUMNS.values()):
        scored = score_dataset(dataset, DEFAULT_SCORES)
        for key, column in SCORE_COLUMNS.items():
            frame[column] = scored[key].astype(np.float64)
        dataset = Dataset(schema, frame)

    labels = dataset.target(TASK_TARGETS["early"])
    logger.info(f"Synthetic dataset ready: {n} rows, {TASK_TARGETS['early']} positive rate {labels.mean():.4f}")
    return dataset
