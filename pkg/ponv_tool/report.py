"""
Artifact writers. Every file carries the provenance block (tool version, config
hash, seeds): JSON files under a "provenance" key, CSV files as leading
'# key: value' comment lines, SVG files in their metadata.

Output bytes depend only on the payload and provenance, so re-running a stage
with unchanged inputs rewrites identical files.
"""
import os
import json
import math
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

SVG_HASH_SALT = "ponv_tool"


@dataclass(frozen=True)
class Provenance:
    version: str
    config_hash: str
    seeds: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        out = {"tool": "ponv_tool", "version": self.version, "config_hash": self.config_hash,
               "seeds": dict(sorted(self.seeds.items()))}
        out.update(sorted(self.extra.items()))
        return out

    def header_lines(self):
        return [f"# {key}: {json.dumps(value, sort_keys=True)}" for key, value in self.as_dict().items()]


def _clean(value):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_clean(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_json(path, payload, provenance):
    _ensure_parent(path)
    document = {"provenance": provenance.as_dict()}
    document.update(_clean(payload))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(document, indent=2, sort_keys=True, allow_nan=False))
        f.write("\n")
    logger.info(f"Wrote {path}")
    return path


def write_csv(path, frame, provenance):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in provenance.header_lines():
            f.write(line + "\n")
        frame.to_csv(f, index=False, lineterminator="\n")
    logger.info(f"Wrote {path} ({len(frame)} rows)")
    return path


def read_csv(path):
    """Read a CSV written by write_csv, skipping the provenance header."""
    with open(path, "r", encoding="utf-8") as f:
        skip = 0
        for line in f:
            if not line.startswith("#"):
                break
            skip += 1
    return pd.read_csv(path, skiprows=skip)


def read_provenance(path):
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].rstrip("\n").partition(": ")
            out[key] = json.loads(value)
    return out


# ---------------------------------------------------------------------------
# Plots
# ---------------------------------------------------------------------------

def _pyplot():
    try:
        import matplotlib
        matplotlib.use("svg")
        matplotlib.rcParams["svg.hashsalt"] = SVG_HASH_SALT
        matplotlib.rcParams["svg.fonttype"] = "none"
        import matplotlib.pyplot as plt
        return plt
    except ImportError:
        logger.warning("matplotlib is not installed; skipping SVG output (CSV files are still written)")
        return None


def _save_svg(fig, plt, path, provenance):
    _ensure_parent(path)
    fig.savefig(path, format="svg", metadata={"Date": None, "Description": json.dumps(provenance.as_dict(),
                                                                                       sort_keys=True)})
    plt.close(fig)
    logger.info(f"Wrote {path}")
    return path


def plot_roc(path, curves, provenance, title="ROC"):
    """curves: {label: RocCurve}."""
    plt = _pyplot()
    if plt is None:
        return None
    fig, ax = plt.subplots(figsize=(5, 5))
    for label, curve in curves.items():
        ax.plot(curve.fpr, curve.tpr, label=f"{label} (AUC {curve.auc:.3f})")
    ax.plot([0, 1], [0, 1], linestyle="--", color="grey", linewidth=0.8)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize="small")
    return _save_svg(fig, plt, path, provenance)


def plot_bars(path, labels, values, provenance, title="", xlabel=""):
    plt = _pyplot()
    if plt is None:
        return None
    fig, ax = plt.subplots(figsize=(6, max(2.0, 0.3 * len(labels) + 1)))
    positions = np.arange(len(labels))
    ax.barh(positions, values)
    ax.set_yticks(positions)
    ax.set_yticklabels(labels)
    ax.invert_yaxis()
    ax.set_xlabel(xlabel)
    ax.set_title(title)
    fig.tight_layout()
    return _save_svg(fig, plt, path, provenance)


def plot_shap_strip(path, shap_matrix, provenance, top_n=10):
    """Strip chart of per-record attributions for the top features, coloured by feature value."""
    plt = _pyplot()
    if plt is None:
        return None
    chosen = list(shap_matrix.order[:top_n])
    fig, ax = plt.subplots(figsize=(6, 0.4 * len(chosen) + 1.5))
    rng = np.random.default_rng(0)
    for row, j in enumerate(chosen):
        values = shap_matrix.values[:, j]
        colour = shap_matrix.feature_values[:, j]
        span = np.ptp(colour) if colour.size else 0.0
        colour = (colour - colour.min()) / span if span > 0 else np.zeros_like(colour)
        jitter = rng.uniform(-0.2, 0.2, size=values.size)
        ax.scatter(values, np.full(values.size, row) + jitter, c=colour, cmap="coolwarm", s=6)
    ax.set_yticks(range(len(chosen)))
    ax.set_yticklabels([shap_matrix.names[j] for j in chosen])
    ax.invert_yaxis()
    ax.axvline(0.0, color="grey", linewidth=0.8)
    ax.set_xlabel("SHAP value")
    fig.tight_layout()
    return _save_svg(fig, plt, path, provenance)


# ---------------------------------------------------------------------------
# Composite writers
# ---------------------------------------------------------------------------

def write_evaluation(out_dir, report, provenance, plots=True):
    """Report JSON, comparison table, per-fold metrics, pooled ROC points and (optionally) ROC SVGs."""
    written = [write_json(os.path.join(out_dir, "evaluation.json"), report.as_dict(), provenance),
               write_csv(os.path.join(out_dir, "metrics_table.csv"), pd.DataFrame(report.table_rows()), provenance)]
    fold_rows = []
    for task_name, task in report.tasks.items():
        for tool in task.tools:
            for fold in task.folds[tool]:
                row = {"task": task_name, "tool": tool}
                row.update({k: v for k, v in fold.as_dict().items() if k != "flags"})
                row["flags"] = ";".join(fold.flags)
                fold_rows.append(row)
        curves, roc_rows = {}, []
        for tool in task.tools:
            curve = task.roc(tool)
            if curve is None:
                continue
            curves[tool] = curve
            for fpr, tpr, threshold in zip(curve.fpr, curve.tpr, curve.thresholds):
                roc_rows.append({"tool": tool, "fpr": fpr, "tpr": tpr,
                                 "threshold": None if math.isinf(threshold) else threshold})
        written.append(write_csv(os.path.join(out_dir, f"roc_{task_name}.csv"), pd.DataFrame(roc_rows,
                                 columns=["tool", "fpr", "tpr", "threshold"]), provenance))
        if plots and curves:
            svg = plot_roc(os.path.join(out_dir, f"roc_{task_name}.svg"), curves, provenance,
                           title=f"ROC, {task_name} PONV ({task.target})")
            if svg:
                written.append(svg)
    written.append(write_csv(os.path.join(out_dir, "fold_metrics.csv"), pd.DataFrame(fold_rows), provenance))
    return written
