"""
Run configuration.

A run is described by a flat KEY=VALUE file (read with python-dotenv) whose
keys are grouped by prefix: DATA_, SPLIT_, DBC_, EVOLVE_, GRAMMAR_, SCORE_,
EVAL_, EXPLAIN_, REPORT_. File values override DEFAULT_CONFIG; CLI flags
override both. The only environment variable consulted is PONV_OUT_DIR.
"""
import os
import logging

from dotenv import dotenv_values

from .automl import EvolutionParams, Grammar
from .dataset import SynthConfig, TASK_TARGETS
from .errors import ConfigError
from .scores import DEFAULT_FACTORS, make_definition, parse_policy
from .splitter import BeeColonyParams
from .utils import get_resource_path, text_hash

logger = logging.getLogger(__name__)

OUT_DIR_ENV = "PONV_OUT_DIR"
DEFAULT_ENV_FILE = "default.env"

DEFAULT_CONFIG = {
    'seed': 0,
    'workers': 1,
    'out_dir': 'ponv_out',
    'task': 'both',
    # [data]
    'data_path': 'synthetic',
    'data_schema_path': '',
    'data_on_reject': 'raise',
    'data_synth_n': 2000,
    'data_synth_prevalence': 0.15,
    'data_synth_delayed_prevalence': 0.15,
    'data_synth_informative': 'CRIST_MLKG,FENT_MCGKG,URINE_MLKG,MORPH_MGKG,PAIN_MOD',
    'data_synth_signal_strength': 1.5,
    'data_synth_noise_features': 0,
    'data_synth_missing_rate': 0.0,
    # [split]
    'split_k': 5,
    'split_method': 'dbc',
    'split_stratify_smoking': False,
    # [dbc]
    'dbc_colony_size': 20,
    'dbc_scouts': 4,
    'dbc_neighborhood': 10,
    'dbc_exponent': 2.0,
    'dbc_abandonment': 15,
    'dbc_max_iterations': 500,
    'dbc_time_budget': 0.0,
    # [evolve]
    'evolve_population': 20,
    'evolve_generations': 10,
    'evolve_tournament': 3,
    'evolve_crossover_rate': 0.5,
    'evolve_mutation_rate': 0.9,
    'evolve_elitism': 1,
    'evolve_inner_k': 3,
    # [grammar]
    'grammar_imputers': 'median,zero,indicator',
    'grammar_scalers': 'none,standard,minmax',
    'grammar_selectors': 'none,5,10,20',
    'grammar_families': 'tree,forest,boosting',
    'grammar_encoding': 'onehot',
    # [score]
    'score_threshold_policy': 'fit',
    'score_apfel': DEFAULT_FACTORS['apfel'],
    'score_koivuranta': DEFAULT_FACTORS['koivuranta'],
    'score_guideline': DEFAULT_FACTORS['guideline'],
    # [eval]
    'eval_tools': 'ours,apfel,koivuranta,guideline',
    'eval_threshold_policy': 'fixed(0.5)',
    # [explain]
    'explain_ablation': True,
    'explain_background_size': 100,
    'explain_max_records': 500,
    'explain_top_n': 10,
    # [report]
    'report_plots': True,
}

TASKS = ("early", "delayed", "both")
UNHASHED_KEYS = ("out_dir", "workers")


def _convert(key, raw, default):
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return lowered in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(key.upper(), f"cannot parse {text!r} as {type(default).__name__}")
    return text


def _split_list(text):
    return [item.strip() for item in str(text).split(",") if item.strip()]


class RunConfig:
    """Effective, validated configuration plus builders for the per-module parameter objects."""

    def __init__(self, values, source=None):
        self.values = dict(values)
        self.source = source
        self.validate()

    def __getitem__(self, key):
        return self.values[key]

    def validate(self):
        v = self.values
        if v['task'] not in TASKS:
            raise ConfigError('TASK', f"expected one of {', '.join(TASKS)}")
        if v['split_k'] < 2:
            raise ConfigError('SPLIT_K', "must be >= 2")
        if v['split_method'] not in ('dbc', 'random'):
            raise ConfigError('SPLIT_METHOD', "expected 'dbc' or 'random'")
        if v['data_on_reject'] not in ('raise', 'drop'):
            raise ConfigError('DATA_ON_REJECT', "expected 'raise' or 'drop'")
        if v['grammar_encoding'] not in ('onehot', 'ordinal'):
            raise ConfigError('GRAMMAR_ENCODING', "expected 'onehot' or 'ordinal'")
        if v['evolve_inner_k'] < 2:
            raise ConfigError('EVOLVE_INNER_K', "must be >= 2")
        if v['workers'] < 1:
            raise ConfigError('WORKERS', "must be >= 1")
        if v['dbc_time_budget'] < 0:
            raise ConfigError('DBC_TIME_BUDGET', "must be >= 0 (0 disables the budget)")
        for key in ('explain_background_size', 'explain_max_records', 'explain_top_n'):
            if v[key] < 1:
                raise ConfigError(key.upper(), "must be >= 1")
        for tool in self.tools:
            if tool != 'ours' and tool not in DEFAULT_FACTORS:
                raise ConfigError('EVAL_TOOLS', f"unknown tool '{tool}'")
        # building these runs their own range checks
        self.bee_colony_params().validate()
        self.evolution_params().validate()
        self.grammar()
        self.score_definitions()
        self.score_policy()
        self.ml_policy()

    @property
    def seed(self):
        return self.values['seed']

    @property
    def workers(self):
        return self.values['workers']

    @property
    def out_dir(self):
        return self.values['out_dir']

    @property
    def targets(self):
        task = self.values['task']
        names = ("early", "delayed") if task == 'both' else (task,)
        return {name: TASK_TARGETS[name] for name in names}

    @property
    def tools(self):
        return _split_list(self.values['eval_tools'])

    def synth_config(self):
        v = self.values
        return SynthConfig(n=v['data_synth_n'], prevalence=v['data_synth_prevalence'],
                           delayed_prevalence=v['data_synth_delayed_prevalence'],
                           informative=tuple(_split_list(v['data_synth_informative'])),
                           signal_strength=v['data_synth_signal_strength'],
                           noise_features=v['data_synth_noise_features'],
                           missing_rate=v['data_synth_missing_rate'])

    def bee_colony_params(self):
        v = self.values
        return BeeColonyParams(colony_size=v['dbc_colony_size'], scouts=v['dbc_scouts'],
                               neighborhood=v['dbc_neighborhood'], exponent=v['dbc_exponent'],
                               abandonment=v['dbc_abandonment'], max_iterations=v['dbc_max_iterations'],
                               seed=self.seed, time_budget=v['dbc_time_budget'] or None,
                               stratify_smoking=v['split_stratify_smoking'])

    def evolution_params(self):
        v = self.values
        return EvolutionParams(population=v['evolve_population'], generations=v['evolve_generations'],
                               tournament=v['evolve_tournament'], crossover_rate=v['evolve_crossover_rate'],
                               mutation_rate=v['evolve_mutation_rate'], elitism=v['evolve_elitism'],
                               seed=self.seed)

    def grammar(self):
        v = self.values
        selectors = []
        for item in _split_list(v['grammar_selectors']):
            if item == 'none':
                selectors.append(None)
            else:
                try:
                    selectors.append(int(item))
                except ValueError:
                    raise ConfigError('GRAMMAR_SELECTORS', f"expected 'none' or an integer, got {item!r}")
        return Grammar(imputers=tuple(_split_list(v['grammar_imputers'])),
                       scalers=tuple(_split_list(v['grammar_scalers'])),
                       selectors=tuple(selectors),
                       families=tuple(_split_list(v['grammar_families'])))

    @property
    def encoding(self):
        return self.values['grammar_encoding']

    def score_definitions(self):
        return {name: make_definition(name, self.values[f'score_{name}']) for name in DEFAULT_FACTORS}

    def score_policy(self):
        return parse_policy(self.values['score_threshold_policy'])

    def ml_policy(self):
        return parse_policy(self.values['eval_threshold_policy'])

    def canonical(self):
        """Sorted KEY=value lines of every setting that can change results (not OUT_DIR or WORKERS)."""
        return "\n".join(f"{k.upper()}={self.values[k]}" for k in sorted(self.values) if k not in UNHASHED_KEYS)

    def config_hash(self):
        return text_hash(self.canonical())


def default_env_path():
    return get_resource_path(DEFAULT_ENV_FILE)


def load_config(dotenv_path=None, overrides=None):
    """
    Load configuration from a KEY=VALUE file, apply PONV_OUT_DIR and CLI
    overrides, validate and return a RunConfig. Without a path the defaults are
    used as-is.
    """
    if dotenv_path:
        if not os.path.exists(dotenv_path):
            raise ConfigError('--config', f"configuration file not found: {dotenv_path}")
        logger.info(f"Loading configuration from: {dotenv_path}")
        loaded_values = dotenv_values(dotenv_path=dotenv_path)
        logger.debug(f"Values loaded from file: {loaded_values}")
    else:
        logger.info("No configuration file given. Using default configuration values.")
        loaded_values = {}

    config = dict(DEFAULT_CONFIG)
    for raw_key, raw_value in loaded_values.items():
        key = raw_key.strip().lower()
        if key not in DEFAULT_CONFIG:
            raise ConfigError(raw_key, "unknown configuration key")
        if raw_value is None:
            raise ConfigError(raw_key, "missing value")
        config[key] = _convert(key, raw_value, DEFAULT_CONFIG[key])

    env_out = os.getenv(OUT_DIR_ENV)
    if env_out:
        logger.info(f"Output directory overridden by {OUT_DIR_ENV}: {env_out}")
        config['out_dir'] = env_out

    for key, value in (overrides or {}).items():
        if value is not None:
            config[key] = value

    run_config = RunConfig(config, source=dotenv_path)
    for key in sorted(config):
        logger.info(f"  {key.upper()} = {config[key]}")
    logger.info(f"Config hash: {run_config.config_hash()}")
    return run_config
