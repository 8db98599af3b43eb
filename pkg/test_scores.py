#!/usr/bin/env python3
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ponv_tool.errors import ConfigError, ContractError
from ponv_tool.scores import (DEFAULT_SCORES, SCORE_COLUMNS, ThresholdPolicy, f1_at, make_definition,
                              parse_factors, parse_policy, score, score_agreement, score_dataset, score_predict)

APFEL = DEFAULT_SCORES["apfel"]
KOIVURANTA = DEFAULT_SCORES["koivuranta"]
GUIDELINE = DEFAULT_SCORES["guideline"]


def test_score_maxima():
    assert (APFEL.max, KOIVURANTA.max, GUIDELINE.max) == (4, 5, 6)


def test_apfel_all_factors_present():
    record = {"GENDER": 1, "SMOKE_STAT": 0, "HX_PONV": 1, "POSTOPI_PACU": 1}
    assert score(record, APFEL) == 4


def test_apfel_no_factor_present():
    record = {"GENDER": 0, "SMOKE_STAT": 1, "HX_PONV": 0, "POSTOPI_PACU": 0}
    assert score(record, APFEL) == 0


def test_koivuranta_duration_counts():
    record = {"GENDER": 1, "SMOKE_STAT": 0, "HX_PONV": 0, "MIGRAINE": 0, "ANES_DUR": 70.0}
    assert score(record, KOIVURANTA) == 3


def test_missing_inputs_count_as_absent():
    assert score({}, APFEL) == 0
    assert score({"GENDER": float("nan"), "SMOKE_STAT": None, "HX_PONV": 1}, APFEL) == 1


def test_guideline_alternatives_form_one_factor():
    both = {"INHALE_ANES": 1, "NITROUS": 1}
    one = {"INHALE_ANES": 0, "NITROUS": 1}
    assert score(both, GUIDELINE) == score(one, GUIDELINE) == 1


FACTOR_COLUMNS = sorted({c for d in DEFAULT_SCORES.values() for c in d.columns})
cell = st.one_of(st.none(), st.just(float("nan")), st.integers(0, 1), st.floats(0, 200))
records = st.fixed_dictionaries({c: cell for c in FACTOR_COLUMNS})


@settings(max_examples=300, deadline=None)
@given(records)
def test_scores_stay_within_bounds(record):
    for definition in DEFAULT_SCORES.values():
        assert 0 <= score(record, definition) <= definition.max


@settings(max_examples=200, deadline=None)
@given(records, st.sampled_from(["GENDER", "SMOKE_STAT", "HX_PONV", "POSTOPI_PACU"]))
def test_satisfying_a_factor_never_lowers_the_score(record, column):
    before = score(record, APFEL)
    satisfied = dict(record)
    satisfied[column] = 0 if column == "SMOKE_STAT" else 1
    assert score(satisfied, APFEL) >= before


def test_stored_scores_agree_on_synthetic_data(small_synth):
    for name, column in SCORE_COLUMNS.items():
        n_complete, n_matching = score_agreement(small_synth, DEFAULT_SCORES[name], column)
        assert n_complete > 0
        assert n_matching == n_complete


def test_vectorised_scores_match_record_scores(small_synth):
    scored = score_dataset(small_synth, DEFAULT_SCORES)
    columns = {c: small_synth.column(c) for c in FACTOR_COLUMNS}
    for row in range(0, small_synth.n_rows, 17):
        record = {c: columns[c][row] for c in FACTOR_COLUMNS}
        for name, definition in DEFAULT_SCORES.items():
            assert scored[name][row] == score(record, definition)


def test_fit_policy_ties_go_to_the_lower_threshold():
    threshold, predictions = score_predict([0, 0, 4, 4], [0, 0, 1, 1], ThresholdPolicy("fit"), max_score=4)
    assert threshold == 1
    assert list(predictions) == [0, 0, 1, 1]


def test_fixed_policy():
    threshold, predictions = score_predict([1, 2, 3], None, parse_policy("fixed(2)"))
    assert threshold == 2
    assert list(predictions) == [0, 1, 1]


def test_empty_scores_are_a_contract_error():
    with pytest.raises(ContractError):
        score_predict([], [], ThresholdPolicy("fit"))


def test_fit_policy_needs_labels():
    with pytest.raises(ContractError):
        score_predict([1, 2], None, ThresholdPolicy("fit"))


def test_fit_threshold_is_exhaustively_optimal(schema):
    from ponv_tool.dataset import SynthConfig, synth_generate
    d = synth_generate(SynthConfig(n=200, prevalence=0.3), seed=21, schema=schema)
    labels = d.target("PONV_24H")
    for name, values in score_dataset(d, DEFAULT_SCORES).items():
        top = DEFAULT_SCORES[name].max
        threshold, _ = score_predict(values, labels, ThresholdPolicy("fit"), max_score=top)
        f1s = [f1_at(values, labels, t) for t in range(top + 1)]
        assert f1_at(values, labels, threshold) == max(f1s)
        assert threshold == f1s.index(max(f1s))


def test_policy_parsing():
    assert str(parse_policy("fit")) == "fit"
    assert parse_policy(" Fixed(0.25) ").threshold == 0.25
    with pytest.raises(ConfigError):
        parse_policy("median")


def test_factor_parsing():
    factors = parse_factors("GENDER==1; AGE<50 ;INHALE_ANES==1|NITROUS==1")
    assert [str(f) for f in factors] == ["GENDER==1", "AGE<50", "INHALE_ANES==1|NITROUS==1"]
    with pytest.raises(ConfigError):
        parse_factors("GENDER")
    with pytest.raises(ConfigError):
        parse_factors("PROCEDURE>other")
    with pytest.raises(ConfigError):
        make_definition("empty", " ; ")


def test_categorical_condition_matches_strings():
    definition = make_definition("ivf", "PROCEDURE==in vitro fertilization")
    assert score({"PROCEDURE": "in vitro fertilization"}, definition) == 1
    assert score({"PROCEDURE": "other"}, definition) == 0
    assert np.array_equal(
        score_dataset_for(["other", None, "in vitro fertilization"], definition), [0, 0, 1])


def score_dataset_for(procedures, definition):
    from conftest import make_dataset
    from ponv_tool.dataset import FeatureSpec
    spec = FeatureSpec(name="PROCEDURE", kind="categorical", categories=("in vitro fertilization", "other"))
    d = make_dataset({"PROCEDURE": procedures}, [0] * len(procedures), specs={"PROCEDURE": spec})
    return score_dataset(d, {"ivf": definition})["ivf"]
