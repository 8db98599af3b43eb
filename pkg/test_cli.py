#!/usr/bin/env python3
import json
import logging

import pytest

from ponv_tool.config import OUT_DIR_ENV
from ponv_tool.main import main
from ponv_tool.report import read_csv, read_provenance

logger = logging.getLogger(__name__)

SMALL_RUN = """\
TASK=early
DATA_SYNTH_N=150
DATA_SYNTH_PREVALENCE=0.3
SPLIT_METHOD=random
SPLIT_K=3
EVOLVE_POPULATION=3
EVOLVE_GENERATIONS=1
EVOLVE_INNER_K=2
GRAMMAR_FAMILIES=tree
GRAMMAR_SELECTORS=none,5
REPORT_PLOTS=false
EXPLAIN_ABLATION=false
EXPLAIN_BACKGROUND_SIZE=10
EXPLAIN_MAX_RECORDS=20
"""


@pytest.fixture(autouse=True)
def no_out_dir_env(monkeypatch):
    monkeypatch.delenv(OUT_DIR_ENV, raising=False)


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.env"
    path.write_text(SMALL_RUN, encoding="utf-8")
    return str(path)


def run(stage, config, out, *extra):
    args = [stage, "--out", str(out)] + (["--config", config] if config else []) + list(extra)
    logger.info(f"ponvtool {' '.join(args)}")
    return main(args)


def test_stats_stage_writes_tables_with_provenance(tmp_path, small_config):
    out = tmp_path / "out"
    assert run("stats", small_config, out) == 0
    table = out / "stats" / "descriptive_stats.csv"
    lines = table.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# ")
    assert any(line.startswith("# stage:") for line in lines)
    assert (out / "stats" / "correlation_pearson.csv").exists()
    assert (out / "stats" / "stats_early_PONV_PACU=1.csv").exists()
    assert (out / "logs" / "ponv_tool.log").exists()


def test_split_stage(tmp_path, small_config):
    out = tmp_path / "out"
    assert run("split", small_config, out) == 0
    summary = json.loads((out / "split" / "summary.json").read_text(encoding="utf-8"))
    assert summary["method"] == "random"
    assert sum(summary["sizes"]) == 150
    assignment = read_csv(str(out / "split" / "assignment.csv"))
    assert len(assignment) == 150


def test_scores_stage_reports_agreement(tmp_path, small_config):
    out = tmp_path / "out"
    assert run("scores", small_config, out) == 0
    agreement = json.loads((out / "scores" / "agreement.json").read_text(encoding="utf-8"))
    for entry in agreement["agreement"].values():
        assert entry["matching"] == entry["complete"]
    assert set(agreement["definitions"]) == {"apfel", "koivuranta", "guideline"}


def test_invalid_configuration_exits_with_2(tmp_path):
    bad = tmp_path / "bad.env"
    bad.write_text("SPLIT_K=1\n", encoding="utf-8")
    assert run("stats", str(bad), tmp_path / "out") == 2
    assert run("stats", str(tmp_path / "absent.env"), tmp_path / "out") == 2


def test_data_error_exits_with_3(tmp_path):
    data = tmp_path / "broken.csv"
    data.write_text("AGE,PONV_PACU\n40,1\n", encoding="utf-8")
    config = tmp_path / "data.env"
    config.write_text(f"DATA_PATH={data}\n", encoding="utf-8")
    assert run("stats", str(config), tmp_path / "out") == 3


def test_non_utf8_data_exits_with_3(tmp_path):
    data = tmp_path / "latin1.csv"
    data.write_bytes(b"AGE,PONV_PACU\n4\xe9,1\n")
    config = tmp_path / "data.env"
    config.write_text(f"DATA_PATH={data}\n", encoding="utf-8")
    assert run("stats", str(config), tmp_path / "out") == 3


def test_every_train_output_carries_the_run_provenance(tmp_path, small_config):
    out = tmp_path / "out"
    assert run("train", small_config, out) == 0
    train = out / "train" / "early"
    names = sorted(path.name for path in train.iterdir())
    assert names == ["fitness_history.csv", "genome.txt", "model.json", "summary.json"]
    hashes = set()
    for name in names:
        path = str(train / name)
        if name.endswith(".json"):
            with open(path, "r", encoding="utf-8") as f:
                provenance = json.load(f)["provenance"]
        else:
            provenance = read_provenance(path)
        assert provenance["stage"] == "train"
        assert provenance["task"] == "early"
        hashes.add(provenance["config_hash"])
    assert len(hashes) == 1
    assert len(read_csv(str(train / "fitness_history.csv"))) == 2

    assert run("explain", small_config, out) == 0
    by_source = read_csv(str(out / "explain" / "early" / "shap_by_source.csv"))
    assert list(by_source.columns) == ["source", "mean_abs_shap"]
    assert list(by_source["mean_abs_shap"]) == sorted(by_source["mean_abs_shap"], reverse=True)
    assert read_provenance(str(out / "explain" / "early" / "shap_by_source.csv"))["stage"] == "explain"


def test_report_needs_evaluate_output(tmp_path, small_config):
    assert run("report", small_config, tmp_path / "out") == 4


@pytest.mark.slow
def test_evaluation_output_is_identical_across_output_directories(tmp_path, small_config):
    first, second = tmp_path / "first", tmp_path / "second"
    assert run("evaluate", small_config, first) == 0
    assert run("evaluate", small_config, second, "--workers", "2") == 0
    for name in ("evaluation.json", "metrics_table.csv", "fold_metrics.csv", "roc_early.csv"):
        assert (first / "evaluate" / name).read_bytes() == (second / "evaluate" / name).read_bytes()
    assert run("report", small_config, first) == 0
    summary = json.loads((first / "report" / "summary.json").read_text(encoding="utf-8"))
    assert "early" in summary["tasks"]


@pytest.mark.slow
def test_full_run_beats_the_clinical_scores(tmp_path):
    config = tmp_path / "full.env"
    config.write_text("TASK=early\nDATA_SYNTH_N=1000\nSPLIT_K=5\n"
                      "DBC_MAX_ITERATIONS=50\nEVOLVE_POPULATION=6\nEVOLVE_GENERATIONS=3\n"
                      "GRAMMAR_FAMILIES=tree,forest\nREPORT_PLOTS=false\nEXPLAIN_MAX_RECORDS=50\n",
                      encoding="utf-8")
    out = tmp_path / "out"
    assert run("all", str(config), out, "--workers", "2") == 0
    evaluation = json.loads((out / "evaluate" / "evaluation.json").read_text(encoding="utf-8"))
    tools = evaluation["tasks"]["early"]["tools"]
    ours = tools["ours"]["mean"]["accuracy"]
    assert ours >= 0.85
    for name in ("apfel", "koivuranta", "guideline"):
        assert ours > tools[name]["mean"]["accuracy"]
    for name in ("ablation_importance.csv", "split_gain.csv", "shap_summary.csv", "shap_by_source.csv"):
        assert (out / "explain" / "early" / name).exists()
    assert (out / "train" / "early" / "genome.txt").exists()
    assert (out / "report" / "summary_table.csv").exists()
