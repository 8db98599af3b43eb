import logging

import numpy as np
import pandas as pd
import pytest

from ponv_tool.dataset import Dataset, FeatureSchema, FeatureSpec, SynthConfig, default_schema, synth_generate

logging.basicConfig(level=logging.DEBUG)

WIDE = 1e6


def spec_for(name, kind="continuous"):
    if kind == "continuous":
        return FeatureSpec(name=name, kind="continuous", min=-WIDE, max=WIDE)
    return FeatureSpec(name=name, kind=kind)


def make_dataset(features, early, delayed=None, kinds=None, specs=None):
    """
    Small Dataset from plain columns. Features are continuous in a wide range
    unless `kinds` ({name: kind}) or `specs` ({name: FeatureSpec}) say otherwise.
    """
    kinds = kinds or {}
    specs = specs or {}
    entries = [specs.get(name) or spec_for(name, kinds.get(name, "continuous")) for name in features]
    entries.append(FeatureSpec(name="PONV_PACU", kind="binary", is_target=True))
    entries.append(FeatureSpec(name="PONV_24H", kind="binary", is_target=True))
    schema = FeatureSchema(tuple(entries))
    early = np.asarray(early, dtype=np.float64)
    delayed = early if delayed is None else np.asarray(delayed, dtype=np.float64)
    frame = pd.DataFrame({name: list(values) for name, values in features.items()})
    frame["PONV_PACU"] = early
    frame["PONV_24H"] = delayed
    return Dataset(schema, frame)


def signal_dataset(n=200, seed=0, extra_noise=1):
    """One feature that decides the label (SIGNAL > 0) plus pure-noise columns."""
    rng = np.random.default_rng(seed)
    signal = rng.standard_normal(n)
    features = {"SIGNAL": signal}
    for i in range(extra_noise):
        features[f"JUNK_{i}"] = rng.standard_normal(n)
    return make_dataset(features, (signal > 0).astype(int))


@pytest.fixture(scope="session")
def schema():
    return default_schema()


@pytest.fixture(scope="session")
def small_synth(schema):
    return synth_generate(SynthConfig(n=300, prevalence=0.3, missing_rate=0.05), seed=11, schema=schema)
