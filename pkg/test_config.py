#!/usr/bin/env python3
import logging

import pytest

from ponv_tool.config import DEFAULT_CONFIG, OUT_DIR_ENV, default_env_path, load_config
from ponv_tool.errors import ConfigError
from ponv_tool.scores import ThresholdPolicy

logger = logging.getLogger(__name__)


@pytest.fixture(autouse=True)
def no_out_dir_env(monkeypatch):
    monkeypatch.delenv(OUT_DIR_ENV, raising=False)


def write_env(tmp_path, text, name="run.env"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_defaults():
    """Without a file every value comes from DEFAULT_CONFIG"""
    config = load_config()
    assert config.values == DEFAULT_CONFIG
    assert config.seed == 0
    assert config.targets == {"early": "PONV_PACU", "delayed": "PONV_24H"}
    assert config.tools == ["ours", "apfel", "koivuranta", "guideline"]


def test_file_values_override_defaults(tmp_path):
    """Keys are case-insensitive and converted to the type of their default"""
    path = write_env(tmp_path, "SEED=7\nsplit_k=3\nSPLIT_STRATIFY_SMOKING=true\nDBC_EXPONENT=1.5\nTASK=early\n")
    config = load_config(path)
    assert config.seed == 7
    assert config['split_k'] == 3
    assert config['split_stratify_smoking'] is True
    assert config['dbc_exponent'] == 1.5
    assert config.targets == {"early": "PONV_PACU"}


def test_unknown_key_is_rejected(tmp_path):
    path = write_env(tmp_path, "SPLIT_FOLDS=5\n")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == "SPLIT_FOLDS"
    assert info.value.exit_code == 2


def test_unparseable_value_is_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write_env(tmp_path, "EVOLVE_POPULATION=many\n"))
    with pytest.raises(ConfigError):
        load_config(write_env(tmp_path, "REPORT_PLOTS=maybe\n"))


def test_out_of_range_values_are_rejected(tmp_path):
    for text in ("SPLIT_K=1\n", "TASK=later\n", "EVAL_TOOLS=ours,lottery\n", "EVOLVE_MUTATION_RATE=2\n",
                 "SCORE_THRESHOLD_POLICY=median\n", "GRAMMAR_FAMILIES=svm\n"):
        with pytest.raises(ConfigError):
            load_config(write_env(tmp_path, text))


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.env"))


def test_precedence(tmp_path, monkeypatch):
    """CLI overrides beat PONV_OUT_DIR, which beats the file"""
    path = write_env(tmp_path, "OUT_DIR=from_file\nSEED=3\n")
    assert load_config(path)['out_dir'] == "from_file"
    monkeypatch.setenv(OUT_DIR_ENV, "from_env")
    assert load_config(path).out_dir == "from_env"
    config = load_config(path, {"out_dir": "from_cli", "seed": 9, "workers": None})
    assert config.out_dir == "from_cli"
    assert config.seed == 9
    assert config.workers == 1


def test_hash_ignores_output_location_and_workers():
    base = load_config()
    moved = load_config(overrides={"out_dir": "elsewhere", "workers": 4})
    assert moved.config_hash() == base.config_hash()
    assert load_config(overrides={"seed": 1}).config_hash() != base.config_hash()
    assert "OUT_DIR" not in base.canonical()


def test_shipped_env_file_matches_defaults():
    config = load_config(default_env_path())
    assert config.values == DEFAULT_CONFIG
    assert config.config_hash() == load_config().config_hash()


def test_builders(tmp_path):
    path = write_env(tmp_path, "DBC_TIME_BUDGET=0\nGRAMMAR_SELECTORS=none,3\nEVOLVE_POPULATION=6\n"
                               "SCORE_APFEL='GENDER==1;HX_PONV==1'\nEVAL_THRESHOLD_POLICY=fit\n")
    config = load_config(path)
    assert config.bee_colony_params().time_budget is None
    assert config.grammar().selectors == (None, 3)
    assert config.evolution_params().population == 6
    assert config.score_definitions()["apfel"].max == 2
    assert config.ml_policy() == ThresholdPolicy("fit")
    assert config.synth_config().n == DEFAULT_CONFIG['data_synth_n']
