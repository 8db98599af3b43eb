"""
Baseline clinical PONV risk scores (simplified Apfel, Koivuranta, consensus
guideline risk-factor count) and their binarization into predictions.

Factor sets are declarative strings so they can be overridden from the run
config, e.g. "GENDER==1;SMOKE_STAT==0;HX_PONV==1;POSTOPI_PACU==1". Conditions
joined by '|' form one factor satisfied by any of them. A missing input makes
its condition false, so scores underestimate rather than fabricate.
"""
import math
import logging
import operator
import re
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import ConfigError, ContractError

logger = logging.getLogger(__name__)

_OPERATORS = {
    "==": operator.eq,
    "!=": operator.ne,
    ">=": operator.ge,
    "<=": operator.le,
    ">": operator.gt,
    "<": operator.lt,
}
_CONDITION = re.compile(r"^\s*([A-Za-z0-9_]+)\s*(==|!=|>=|<=|>|<)\s*(.+?)\s*$")


@dataclass(frozen=True)
class Condition:
    column: str
    op: str
    value: object

    def holds(self, cell):
        if cell is None or (isinstance(cell, float) and math.isnan(cell)):
            return False
        if isinstance(self.value, float):
            try:
                return bool(_OPERATORS[self.op](float(cell), self.value))
            except (TypeError, ValueError):
                return False
        return bool(_OPERATORS[self.op](str(cell), self.value))

    def __str__(self):
        value = f"{self.value:g}" if isinstance(self.value, float) else self.value
        return f"{self.column}{self.op}{value}"


@dataclass(frozen=True)
class Factor:
    conditions: Tuple[Condition, ...]

    @property
    def columns(self):
        return tuple(c.column for c in self.conditions)

    def satisfied(self, record):
        return any(c.holds(record.get(c.column)) for c in self.conditions)

    def __str__(self):
        return "|".join(str(c) for c in self.conditions)


@dataclass(frozen=True)
class ScoreDefinition:
    name: str
    factors: Tuple[Factor, ...]

    @property
    def max(self):
        return len(self.factors)

    @property
    def columns(self):
        return tuple(sorted({col for f in self.factors for col in f.columns}))


def parse_condition(text):
    match = _CONDITION.match(text)
    if not match:
        raise ConfigError("factor", f"cannot parse condition '{text}'")
    column, op, raw = match.groups()
    try:
        value = float(raw)
    except ValueError:
        if op not in ("==", "!="):
            raise ConfigError("factor", f"'{text}': ordering comparison needs a number")
        value = raw
    return Condition(column, op, value)


def parse_factors(text):
    factors = []
    for chunk in text.split(";"):
        if chunk.strip():
            factors.append(Factor(tuple(parse_condition(part) for part in chunk.split("|"))))
    if not factors:
        raise ConfigError("factor", "a score needs at least one factor")
    return tuple(factors)


def make_definition(name, text):
    return ScoreDefinition(name, parse_factors(text))


# Koivuranta's motion-sickness factor has no column of its own; MIGRAINE stands in.
DEFAULT_FACTORS = {
    "apfel": "GENDER==1;SMOKE_STAT==0;HX_PONV==1;POSTOPI_PACU==1",
    "koivuranta": "GENDER==1;SMOKE_STAT==0;HX_PONV==1;MIGRAINE==1;ANES_DUR>60",
    "guideline": "GENDER==1;SMOKE_STAT==0;HX_PONV==1;AGE<50;INHALE_ANES==1|NITROUS==1;POSTOPI_PACU==1",
}
DEFAULT_SCORES = {name: make_definition(name, text) for name, text in DEFAULT_FACTORS.items()}
SCORE_COLUMNS = {"apfel": "APFEL_SCORE", "koivuranta": "KOIV_SCORE", "guideline": "GUID_RISK"}


def score(record, definition):
    """Number of satisfied factors for one record (a mapping of column -> value)."""
    return sum(1 for factor in definition.factors if factor.satisfied(record))


def _column_or_missing(d, column):
    if column in d.schema:
        return d.column(column)
    return np.full(d.n_rows, np.nan)


def _factor_mask(d, factor):
    mask = np.zeros(d.n_rows, dtype=bool)
    for cond in factor.conditions:
        values = _column_or_missing(d, cond.column)
        mask |= np.array([cond.holds(v) for v in values], dtype=bool)
    return mask


def score_dataset(d, definitions):
    """Vectorised scores for every record: {definition name: int array}."""
    result = {}
    for name, definition in definitions.items():
        total = np.zeros(d.n_rows, dtype=np.int64)
        for factor in definition.factors:
            total += _factor_mask(d, factor)
        result[name] = total
    return result


def score_agreement(d, definition, column):
    """
    Compare recomputed scores with a stored score column on records whose factor
    inputs are all present. Returns (n_complete, n_matching).
    """
    complete = np.ones(d.n_rows, dtype=bool)
    for col in definition.columns:
        values = _column_or_missing(d, col)
        complete &= np.array([not (v is None or (isinstance(v, float) and math.isnan(v))) for v in values])
    recomputed = score_dataset(d, {definition.name: definition})[definition.name]
    stored = d.column(column)
    matching = complete & (recomputed == stored)
    n_complete, n_matching = int(complete.sum()), int(matching.sum())
    if n_matching < n_complete:
        logger.warning(f"{definition.name}: {n_complete - n_matching} of {n_complete} complete records "
                       f"disagree with stored {column}")
    return n_complete, n_matching


# ---------------------------------------------------------------------------
# Binarization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdPolicy:
    """kind 'fixed' uses `threshold`; kind 'fit' picks the training-F1 maximiser."""
    kind: str = "fit"
    threshold: float = 0.5

    def __post_init__(self):
        if self.kind not in ("fixed", "fit"):
            raise ConfigError("threshold_policy", f"unknown policy '{self.kind}'")

    def __str__(self):
        return f"fixed({self.threshold:g})" if self.kind == "fixed" else "fit"


def parse_policy(text, default_threshold=0.5):
    text = text.strip().lower()
    if text == "fit":
        return ThresholdPolicy("fit", default_threshold)
    match = re.match(r"^fixed\(\s*([-+0-9.eE]+)\s*\)$", text)
    if match:
        return ThresholdPolicy("fixed", float(match.group(1)))
    raise ConfigError("threshold_policy", f"expected 'fit' or 'fixed(<t>)', got '{text}'")


def f1_at(scores, labels, threshold):
    predicted = scores >= threshold
    tp = int(np.sum(predicted & (labels == 1)))
    fp = int(np.sum(predicted & (labels == 0)))
    fn = int(np.sum(~predicted & (labels == 1)))
    return 2 * tp / (2 * tp + fp + fn) if tp else 0.0


def best_f1_threshold(scores, labels, candidates):
    """Candidate with maximal F1; ties go to the earliest (lowest) candidate."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    best, best_f1 = None, -1.0
    for t in sorted(candidates):
        f1 = f1_at(scores, labels, t)
        if f1 > best_f1:
            best, best_f1 = t, f1
    return best


def score_predict(scores, labels, policy, max_score=None):
    """
    Binarize integer scores: prediction = score >= threshold.

    With a 'fit' policy the threshold is chosen over 0..max_score by training F1
    (ties -> lower threshold); labels must come from training folds only.
    """
    scores = np.asarray(scores, dtype=np.int64)
    if scores.size == 0:
        raise ContractError("score_predict needs at least one score")
    if labels is not None and len(labels) != len(scores):
        raise ContractError("scores and labels must have the same length")
    if policy.kind == "fixed":
        threshold = policy.threshold
    else:
        if labels is None:
            raise ContractError("a 'fit' policy needs training labels")
        top = int(max_score) if max_score is not None else int(scores.max())
        threshold = best_f1_threshold(scores, labels, range(0, top + 1))
    predictions = (scores >= threshold).astype(np.int64)
    return threshold, predictions
