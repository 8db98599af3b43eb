"""
Evaluation of PONV prediction tools: confusion-matrix metrics, ROC/AUC, outer
k-fold cross-validation of the learned pipeline against the clinical scores,
and a one-way ANOVA over per-fold accuracies.
"""
import math
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError
from .scores import DEFAULT_SCORES, best_f1_threshold, score_dataset, score_predict, ThresholdPolicy
from .utils import parallel_map, stable_seed, text_hash

logger = logging.getLogger(__name__)

REPORT_VERSION = 1
LEARNED_TOOL = "ours"


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_predictions(cls, predictions, labels):
        predictions = np.asarray(predictions, dtype=bool)
        labels = np.asarray(labels, dtype=bool)
        if predictions.shape != labels.shape:
            raise ContractError("predictions and labels must have the same length")
        return cls(int(np.sum(predictions & labels)), int(np.sum(predictions & ~labels)),
                   int(np.sum(~predictions & ~labels)), int(np.sum(~predictions & labels)))

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def as_dict(self):
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    recall: float
    precision: float
    f1: float
    flags: Tuple[str, ...] = ()

    def __iter__(self):
        return iter((self.accuracy, self.recall, self.precision, self.f1))

    def as_dict(self):
        return {"accuracy": self.accuracy, "recall": self.recall, "precision": self.precision, "f1": self.f1}


def metrics(c):
    """Accuracy, recall, precision and F1. Undefined ratios are 0 and flagged."""
    if c.total <= 0:
        raise ContractError("metrics need at least one evaluated record")
    flags = []
    accuracy = (c.tp + c.tn) / c.total
    if c.tp + c.fn == 0:
        recall = 0.0
        flags.append("recall_undefined")
    else:
        recall = c.tp / (c.tp + c.fn)
    if c.tp + c.fp == 0:
        precision = 0.0
        flags.append("precision_undefined")
    else:
        precision = c.tp / (c.tp + c.fp)
    if precision + recall == 0:
        f1 = 0.0
        if c.tp + c.fp + c.fn:
            flags.append("f1_undefined")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    if flags:
        logger.debug(f"Degenerate confusion matrix {c.as_dict()}: {flags}")
    return Metrics(accuracy, recall, precision, f1, tuple(flags))


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape:
        raise ContractError("scores and labels must have the same length")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise ContractError("AUC needs both classes present")
    return scores, labels


def auc(scores, labels):
    """Mann-Whitney AUC: P(score+ > score-) + 0.5 P(tie)."""
    scores, labels = _check_binary(scores, labels)
    ranks = rankdata(scores)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_curve(scores, labels):
    """
    ROC points from sweeping the threshold down through the distinct scores;
    starts at (0, 0) with threshold +inf and ends at (1, 1).
    """
    scores, labels = _check_binary(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    scores, labels = scores[order], labels[order]
    distinct = np.flatnonzero(np.diff(scores)) if scores.size > 1 else np.array([], dtype=np.int64)
    last = np.r_[distinct, scores.size - 1]
    tps = np.cumsum(labels)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / labels.sum()]
    fpr = np.r_[0.0, fps / (labels.size - labels.sum())]
    thresholds = np.r_[np.inf, scores[last]]
    return RocCurve(fpr, tpr, thresholds, auc_trapezoid(fpr, tpr))


def auc_trapezoid(fpr, tpr):
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


# ---------------------------------------------------------------------------
# One-way ANOVA
# ---------------------------------------------------------------------------

_BETA_EPS = 1e-15
_BETA_TINY = 1e-300
_BETA_MAX_ITER = 1000


def _betacf(a, b, x):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETA_TINY:
        d = _BETA_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _BETA_TINY if abs(d) < _BETA_TINY else d
        c = 1.0 + aa / c
        c = _BETA_TINY if abs(c) < _BETA_TINY else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _BETA_TINY if abs(d) < _BETA_TINY else d
        c = 1.0 + aa / c
        c = _BETA_TINY if abs(c) < _BETA_TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_EPS:
            return h
    logger.warning(f"Incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")
    return h


def betai(a, b, x):
    """Regularized incomplete beta function I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ContractError(f"betai needs x in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_bt = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    bt = math.exp(log_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def f_survival(f, df_between, df_within):
    """Upper tail P(F > f) of the F distribution."""
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return betai(df_within / 2.0, df_between / 2.0, df_within / (df_within + df_between * f))


@dataclass(frozen=True)
class AnovaResult:
    f: float
    p: float
    df_between: int
    df_within: int
    flags: Tuple[str, ...] = ()

    def __iter__(self):
        return iter((self.f, self.p))


def anova_oneway(groups):
    """Classical one-way ANOVA. All values equal gives F=0, p=1; zero within-group variance with differing means gives F=inf, p=0."""
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(groups) < 2:
        raise ContractError("ANOVA needs at least two groups")
    for i, g in enumerate(groups):
        if g.size < 2:
            raise ContractError(f"ANOVA group {i} has fewer than two values")
    everything = np.concatenate(groups)
    grand = everything.mean()
    ss_between = float(sum(g.size * (g.mean() - grand) ** 2 for g in groups))
    ss_within = float(sum(((g - g.mean()) ** 2).sum() for g in groups))
    df_between = len(groups) - 1
    df_within = everything.size - len(groups)
    if ss_between == 0.0:
        return AnovaResult(0.0, 1.0, df_between, df_within)
    if ss_within == 0.0:
        logger.warning("ANOVA groups have zero within-group variance; F is infinite")
        return AnovaResult(math.inf, 0.0, df_between, df_within, ("infinite_f",))
    f = (ss_between / df_between) / (ss_within / df_within)
    return AnovaResult(f, f_survival(f, df_between, df_within), df_between, df_within)


# ---------------------------------------------------------------------------
# Outer k-fold evaluation
# ---------------------------------------------------------------------------

@dataclass
class FoldResult:
    fold: int
    n_train: int
    n_test: int
    skipped: bool = False
    confusion: Optional[ConfusionMatrix] = None
    metrics: Optional[Metrics] = None
    auc: Optional[float] = None
    threshold: Optional[float] = None
    description: str = ""
    flags: Tuple[str, ...] = ()
    unknown_categories: int = 0

    def as_dict(self):
        out = {"fold": self.fold, "n_train": self.n_train, "n_test": self.n_test, "skipped": self.skipped,
               "flags": list(self.flags)}
        if not self.skipped:
            out.update(self.confusion.as_dict())
            out.update(self.metrics.as_dict())
            out["auc"] = self.auc
            out["threshold"] = self.threshold
            out["unknown_categories"] = self.unknown_categories
            if self.description:
                out["pipeline"] = self.description
        return out


@dataclass
class TaskEvaluation:
    target: str
    tools: Tuple[str, ...]
    folds: Dict[str, List[FoldResult]]
    oof_scores: Dict[str, np.ndarray] = field(default_factory=dict)
    oof_labels: Optional[np.ndarray] = None
    anova: Optional[AnovaResult] = None
    score_policy: str = "fit"
    ml_policy: str = "fixed(0.5)"

    def evaluated(self, tool):
        return [f for f in self.folds[tool] if not f.skipped]

    def means(self, tool):
        done = self.evaluated(tool)
        if not done:
            return None
        out = {key: float(np.mean([getattr(f.metrics, key) for f in done]))
               for key in ("accuracy", "recall", "precision", "f1")}
        aucs = [f.auc for f in done if f.auc is not None]
        out["auc"] = float(np.mean(aucs)) if aucs else None
        return out

    def roc(self, tool):
        """Pooled out-of-fold ROC (None when a class is absent)."""
        scores = self.oof_scores.get(tool)
        if scores is None:
            return None
        mask = ~np.isnan(scores)
        labels = self.oof_labels[mask]
        if labels.size == 0 or labels.min() == labels.max():
            return None
        return roc_curve(scores[mask], labels)

    def relative_improvement(self):
        """Relative accuracy gain of the learned tool over the best clinical score."""
        if LEARNED_TOOL not in self.tools:
            return None
        ours = self.means(LEARNED_TOOL)
        baselines = [self.means(t) for t in self.tools if t != LEARNED_TOOL]
        baselines = [b["accuracy"] for b in baselines if b is not None]
        if ours is None or not baselines or max(baselines) == 0:
            return None
        best = max(baselines)
        return (ours["accuracy"] - best) / best

    def as_dict(self):
        out = {
            "target": self.target,
            "score_threshold_policy": self.score_policy,
            "ml_threshold_policy": self.ml_policy,
            "tools": {},
            "relative_improvement": self.relative_improvement(),
        }
        for tool in self.tools:
            out["tools"][tool] = {"folds": [f.as_dict() for f in self.folds[tool]], "mean": self.means(tool),
                                  "n_evaluated_folds": len(self.evaluated(tool))}
        if self.anova is not None:
            out["anova"] = {"f": None if math.isinf(self.anova.f) else self.anova.f, "p": self.anova.p,
                            "df_between": self.anova.df_between, "df_within": self.anova.df_within,
                            "flags": list(self.anova.flags)}
        return out


@dataclass
class EvaluationReport:
    tasks: Dict[str, TaskEvaluation]
    provenance: dict

    def as_dict(self):
        return {"version": REPORT_VERSION, "provenance": self.provenance,
                "tasks": {name: t.as_dict() for name, t in self.tasks.items()}}

    def table_rows(self):
        """One row per (task, tool) with the mean fold metrics."""
        rows = []
        for name, task in self.tasks.items():
            for tool in task.tools:
                m = task.means(tool)
                if m is not None:
                    rows.append({"task": name, "tool": tool, "accuracy": m["accuracy"], "recall": m["recall"],
                                 "precision": m["precision"], "f1": m["f1"], "auc": m["auc"]})
        return rows


def partition_id(p):
    return text_hash(",".join(map(str, p.assignment.tolist())))[:16]


def _safe_auc(scores, labels):
    try:
        return auc(scores, labels)
    except ContractError:
        return None


def _unknown_category_count(fitted, before=0):
    """Unknown-category routings the fitted model has tallied since `before`, read in the process that predicted."""
    m = getattr(fitted, "model", None)
    diagnostics = getattr(m, "diagnostics", None) or {}
    return int(diagnostics.get("unknown_categories", 0)) - before


def _evaluate_fold(task):
    fold, train, test, target, tools, factory, definitions, score_policy, ml_policy, seed = task
    labels_train, labels_test = train.target(target), test.target(target)
    base = FoldResult(fold, train.n_rows, test.n_rows)
    if labels_train.min() == labels_train.max():
        logger.warning(f"Fold {fold}: training cohort has a single class; fold skipped")
        skipped = FoldResult(fold, train.n_rows, test.n_rows, skipped=True, flags=("single_class_train",))
        return {tool: skipped for tool in tools}, {tool: np.full(test.n_rows, np.nan) for tool in tools}
    test_flags = () if labels_test.min() != labels_test.max() else ("single_class_test",)

    results, scores_out = {}, {}
    for tool in tools:
        description = ""
        unknown = 0
        if tool == LEARNED_TOOL:
            fitted = factory(train, stable_seed(seed, "fold", fold))
            description = getattr(fitted, "description", "")
            before = _unknown_category_count(fitted)
            test_scores = fitted.predict_proba(test)
            unknown = _unknown_category_count(fitted, before)
            if unknown:
                logger.warning(f"Fold {fold}: {unknown} test values fell in categories unseen at that split")
            if ml_policy.kind == "fit":
                train_scores = fitted.predict_proba(train)
                threshold = best_f1_threshold(train_scores, labels_train, np.unique(train_scores))
            else:
                threshold = ml_policy.threshold
            predictions = (test_scores >= threshold).astype(np.int64)
        else:
            definition = definitions[tool]
            train_scores = score_dataset(train, {tool: definition})[tool]
            test_scores = score_dataset(test, {tool: definition})[tool].astype(np.float64)
            threshold, _ = score_predict(train_scores, labels_train, score_policy, max_score=definition.max)
            predictions = (test_scores >= threshold).astype(np.int64)
        confusion = ConfusionMatrix.from_predictions(predictions, labels_test)
        results[tool] = FoldResult(fold, base.n_train, base.n_test, confusion=confusion,
                                   metrics=metrics(confusion), auc=_safe_auc(test_scores, labels_test),
                                   threshold=float(threshold), description=description, flags=test_flags,
                                   unknown_categories=unknown)
        scores_out[tool] = np.asarray(test_scores, dtype=np.float64)
    return results, scores_out


def kfold_evaluate(factory, d, p, tools, target, score_policy=None, ml_policy=None, definitions=None, seed=0,
                   workers=1):
    """
    Outer cross-validation: each cohort of `p` is held out once, every tool is
    fitted on the remaining cohorts only (the learned tool through
    `factory(train, seed)`, clinical scores through their threshold policy) and
    scored on the held-out cohort. Training folds with a single class are
    skipped and flagged.
    """
    if len(p.assignment) != d.n_rows:
        raise ContractError("partition does not cover the dataset")
    definitions = definitions or DEFAULT_SCORES
    for tool in tools:
        if tool != LEARNED_TOOL and tool not in definitions:
            raise ContractError(f"unknown tool '{tool}'")
    score_policy = score_policy or ThresholdPolicy("fit")
    ml_policy = ml_policy or ThresholdPolicy("fixed", 0.5)
    tasks = [(j, d.take(train_idx), d.take(test_idx), target, tuple(tools), factory, definitions, score_policy,
              ml_policy, seed)
             for j, (train_idx, test_idx) in enumerate(p.folds())]
    logger.info(f"Evaluating {len(tools)} tools on {target} over {p.k} folds")
    outputs = parallel_map(_evaluate_fold, tasks, workers)

    folds = {tool: [] for tool in tools}
    oof = {tool: np.full(d.n_rows, np.nan) for tool in tools}
    for (train_idx, test_idx), (results, scores) in zip(p.folds(), outputs):
        for tool in tools:
            folds[tool].append(results[tool])
            oof[tool][test_idx] = scores[tool]
    evaluation = TaskEvaluation(target, tuple(tools), folds, oof, d.target(target), None,
                                str(score_policy), str(ml_policy))

    accuracy_groups = [[f.metrics.accuracy for f in evaluation.evaluated(t)] for t in tools]
    if len(tools) >= 2 and all(len(g) >= 2 for g in accuracy_groups):
        evaluation.anova = anova_oneway(accuracy_groups)
    else:
        logger.warning(f"ANOVA skipped for {target}: needs two tools with at least two evaluated folds each")
    for tool in tools:
        m = evaluation.means(tool)
        if m is None:
            logger.warning(f"{tool}: no evaluated folds for {target}")
        else:
            logger.info(f"{tool} on {target}: accuracy {m['accuracy']:.4f}, recall {m['recall']:.4f}, "
                        f"precision {m['precision']:.4f}, F1 {m['f1']:.4f}")
    return evaluation
