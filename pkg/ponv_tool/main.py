import os
import sys
import json
import logging
import argparse
import platform

import pandas as pd

from . import __version__
from .automl import GenomeFactory, SearchFactory, parse_genome, search_pipeline
from .config import load_config
from .dataset import correlation, default_schema, descriptive_stats, load_csv, load_schema, subgroup_stats, synth_generate
from .errors import PonvError, StageError
from .evaluation import EvaluationReport, kfold_evaluate, partition_id
from .explain import ablation_importance, shap_summary
from .model import split_gain_importance
from .report import Provenance, plot_bars, plot_shap_strip, write_csv, write_evaluation, write_json
from .scores import SCORE_COLUMNS, score_agreement, score_dataset
from .splitter import cohort_distance, dbc_optimize, random_partition, stratified_report

logger = logging.getLogger(__name__)

STAGES = ("stats", "split", "scores", "train", "evaluate", "explain", "report")
LOG_FILE = "ponv_tool.log"
_installed_handlers = []


def setup_logging(out_dir, verbose=False):
    """File log under <out>/logs plus console output; returns the log file path."""
    log_dir = os.path.join(out_dir, "logs")
    os.makedirs(log_dir, exist_ok=True)
    log_file = os.path.join(log_dir, LOG_FILE)

    root_logger = logging.getLogger()
    for handler in _installed_handlers:
        root_logger.removeHandler(handler)
        handler.close()
    _installed_handlers.clear()
    root_logger.setLevel(logging.DEBUG)

    file_handler = logging.FileHandler(log_file, encoding="utf-8")
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
    root_logger.addHandler(file_handler)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(logging.DEBUG if verbose else logging.INFO)
    console_handler.setFormatter(logging.Formatter('%(levelname)s - %(message)s'))
    root_logger.addHandler(console_handler)
    _installed_handlers.extend([file_handler, console_handler])

    logging.info("===== ponv_tool Starting =====")
    logging.info(f"Version: {__version__}")
    logging.info(f"Python version: {sys.version}")
    logging.info(f"Platform: {platform.platform()}")
    logging.info(f"Log file: {log_file}")
    return log_file


class Run:
    """Shared state of one CLI invocation; stages compute what they need lazily."""

    def __init__(self, config):
        self.config = config
        self.out_dir = config.out_dir
        self._dataset = None
        self._partition = None
        self._genomes = {}

    def provenance(self, stage, **extra):
        values = {"stage": stage, "data": self.config['data_path']}
        values.update(extra)
        return Provenance(__version__, self.config.config_hash(), {"seed": self.config.seed}, values)

    def path(self, *parts):
        return os.path.join(self.out_dir, *parts)

    @property
    def dataset(self):
        if self._dataset is None:
            cfg = self.config
            schema_path = cfg['data_schema_path']
            schema = load_schema(schema_path) if schema_path else default_schema()
            if cfg['data_path'] == 'synthetic':
                self._dataset = synth_generate(cfg.synth_config(), cfg.seed, schema)
            else:
                self._dataset = load_csv(cfg['data_path'], schema, on_reject=cfg['data_on_reject'])
            logger.info(f"Dataset ready: {self._dataset.n_rows} records, "
                        f"{len(self._dataset.schema.feature_names)} features")
        return self._dataset

    @property
    def partition(self):
        if self._partition is None:
            cfg = self.config
            k = cfg['split_k']
            if cfg['split_method'] == 'dbc':
                self._partition = dbc_optimize(self.dataset, k, cfg.bee_colony_params())
            else:
                self._partition = random_partition(self.dataset, k, cfg.seed, cfg['split_stratify_smoking'])
        return self._partition

    def genome(self, task, target):
        """Genome from the train stage's output if present, otherwise searched now."""
        if task not in self._genomes:
            saved = self.path("train", task, "genome.txt")
            if os.path.exists(saved):
                with open(saved, "r", encoding="utf-8") as f:
                    self._genomes[task] = parse_genome(f.read())
                logger.info(f"Using trained genome for {task} from {saved}")
            else:
                cfg = self.config
                found = search_pipeline(self.dataset, target, cfg.grammar(), cfg.evolution_params(),
                                        cfg['evolve_inner_k'], cfg.encoding, cfg.workers)
                self._genomes[task] = found.genome
        return self._genomes[task]


def run_stats(run):
    d = run.dataset
    prov = run.provenance("stats")
    write_csv(run.path("stats", "descriptive_stats.csv"), descriptive_stats(d).to_frame(), prov)
    for task, target in run.config.targets.items():
        for value, table in subgroup_stats(d, target).items():
            write_csv(run.path("stats", f"stats_{task}_{target}={value}.csv"), table.to_frame(), prov)
    for method in ("pearson", "spearman"):
        matrix = correlation(d, method)
        write_csv(run.path("stats", f"correlation_{method}.csv"), matrix.to_frame().rename_axis("feature").reset_index(), prov)


def run_split(run):
    cfg = run.config
    d, p = run.dataset, run.partition
    baseline = cohort_distance(random_partition(d, p.k, cfg.seed), d, cfg['split_stratify_smoking'])
    prov = run.provenance("split", partition_id=partition_id(p))
    frame = p.to_frame(d.record_ids)
    write_csv(run.path("split", "assignment.csv"), frame, prov)
    write_csv(run.path("split", "cohorts.csv"), stratified_report(p, d), prov)
    summary = {"method": cfg['split_method'], "k": p.k, "objective": cohort_distance(p, d, cfg['split_stratify_smoking']),
               "baseline_objective": baseline, "sizes": p.sizes.tolist()}
    if p.trace is not None:
        summary.update({"iterations": p.trace.iterations, "initial_objective": p.trace.initial_objective,
                        "timed_out": p.trace.timed_out})
        history = pd.DataFrame({"iteration": range(1, len(p.trace.history) + 1), "best_objective": p.trace.history})
        write_csv(run.path("split", "history.csv"), history, prov)
    write_json(run.path("split", "summary.json"), summary, prov)


def run_scores(run):
    cfg, d = run.config, run.dataset
    definitions = cfg.score_definitions()
    prov = run.provenance("scores")
    scored = score_dataset(d, definitions)
    frame = pd.DataFrame({"record_id": d.record_ids})
    for name in definitions:
        frame[name] = scored[name]
    write_csv(run.path("scores", "scores.csv"), frame, prov)
    agreement = {}
    for name, definition in definitions.items():
        column = SCORE_COLUMNS[name]
        if column in d.schema:
            n_complete, n_matching = score_agreement(d, definition, column)
            agreement[name] = {"column": column, "complete": n_complete, "matching": n_matching}
    factor_sets = {name: ";".join(str(f) for f in definition.factors) for name, definition in definitions.items()}
    write_json(run.path("scores", "agreement.json"), {"definitions": factor_sets, "agreement": agreement}, prov)


def run_train(run):
    cfg, d = run.config, run.dataset
    for task, target in cfg.targets.items():
        found = search_pipeline(d, target, cfg.grammar(), cfg.evolution_params(), cfg['evolve_inner_k'],
                                cfg.encoding, cfg.workers)
        run._genomes[task] = found.genome
        prov = run.provenance("train", task=task)
        os.makedirs(run.path("train", task), exist_ok=True)
        with open(run.path("train", task, "genome.txt"), "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(prov.header_lines() + [found.genome.serialize()]) + "\n")
        history = pd.DataFrame({"generation": range(len(found.history)), "best_fitness": found.history})
        write_csv(run.path("train", task, "fitness_history.csv"), history, prov)
        fitted = found.genome.to_pipeline(cfg.encoding).fit(d, target, seed=cfg.seed, workers=cfg.workers)
        fitted.model.save(run.path("train", task, "model.json"), prov.as_dict())
        write_json(run.path("train", task, "summary.json"),
                   {"genome": found.genome.serialize(), "evolved_genome": found.evolved.serialize(),
                    "inner_cv_accuracy": found.fitness, "features": list(fitted.feature_names)}, prov)


def run_evaluate(run):
    cfg, d, p = run.config, run.dataset, run.partition
    tasks = {}
    for task, target in cfg.targets.items():
        factory = SearchFactory(target, cfg.grammar(), cfg.evolution_params(), cfg['evolve_inner_k'], cfg.encoding)
        tasks[task] = kfold_evaluate(factory, d, p, cfg.tools, target, cfg.score_policy(), cfg.ml_policy(),
                                     cfg.score_definitions(), cfg.seed, cfg.workers)
    prov = run.provenance("evaluate", partition_id=partition_id(p), split_method=cfg['split_method'])
    report = EvaluationReport(tasks, prov.as_dict())
    write_evaluation(run.path("evaluate"), report, prov, plots=cfg['report_plots'])
    return report


def run_explain(run):
    cfg, d, p = run.config, run.dataset, run.partition
    for task, target in cfg.targets.items():
        genome = run.genome(task, target)
        prov = run.provenance("explain", task=task, genome=genome.serialize())
        out = run.path("explain", task)
        if cfg['explain_ablation']:
            importance = ablation_importance(GenomeFactory(target, genome, cfg.encoding), d, p, cfg.seed, target,
                                             cfg.workers)
            write_csv(os.path.join(out, "ablation_importance.csv"), importance.to_frame(), prov)
            if cfg['report_plots']:
                order = importance.values.argsort()[::-1][:cfg['explain_top_n']]
                plot_bars(os.path.join(out, "ablation_importance.svg"), [importance.names[i] for i in order],
                          importance.values[order], prov, title=f"Ablation importance ({task})", xlabel="importance")
        fitted = genome.to_pipeline(cfg.encoding).fit(d, target, seed=cfg.seed, workers=cfg.workers)
        gains = split_gain_importance(fitted.model)
        write_csv(os.path.join(out, "split_gain.csv"),
                  pd.DataFrame({"feature": fitted.feature_names, "split_gain": gains}), prov)
        shap = shap_summary(fitted, d, cfg['explain_background_size'], cfg['explain_max_records'], cfg.seed)
        write_csv(os.path.join(out, "shap_summary.csv"), shap.summary_frame(), prov)
        grouped = shap.by_source()
        by_source = pd.DataFrame({"source": grouped.columns, "mean_abs_shap": grouped.abs().mean().to_numpy()})
        write_csv(os.path.join(out, "shap_by_source.csv"),
                  by_source.sort_values(["mean_abs_shap", "source"], ascending=[False, True], kind="mergesort"), prov)
        write_csv(os.path.join(out, "shap_values.csv"), shap.long_frame(cfg['explain_top_n']), prov)
        if cfg['report_plots']:
            plot_shap_strip(os.path.join(out, "shap_summary.svg"), shap, prov, cfg['explain_top_n'])


def run_report(run):
    source = run.path("evaluate", "evaluation.json")
    if not os.path.exists(source):
        raise StageError("report", f"{source} not found; run the evaluate stage first")
    with open(source, "r", encoding="utf-8") as f:
        evaluation = json.load(f)
    summary = {"tasks": {}}
    rows = []
    for task, data in evaluation["tasks"].items():
        entry = {"target": data["target"], "relative_improvement": data["relative_improvement"],
                 "anova": data.get("anova"), "means": {t: v["mean"] for t, v in data["tools"].items()}}
        genome_file = run.path("train", task, "genome.txt")
        if os.path.exists(genome_file):
            with open(genome_file, "r", encoding="utf-8") as g:
                entry["genome"] = parse_genome(g.read()).serialize()
        summary["tasks"][task] = entry
        for tool, values in entry["means"].items():
            if values:
                rows.append({"task": task, "tool": tool, **values})
    prov = run.provenance("report", evaluation_config_hash=evaluation["provenance"]["config_hash"])
    write_json(run.path("report", "summary.json"), summary, prov)
    write_csv(run.path("report", "summary_table.csv"), pd.DataFrame(rows), prov)


STAGE_FUNCTIONS = {
    "stats": run_stats,
    "split": run_split,
    "scores": run_scores,
    "train": run_train,
    "evaluate": run_evaluate,
    "explain": run_explain,
    "report": run_report,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="ponvtool", description="PONV prediction and clinical score comparison")
    parser.add_argument("stage", choices=STAGES + ("all",), help="stage to run ('all' runs every stage in order)")
    parser.add_argument("--config", help="KEY=VALUE run configuration file")
    parser.add_argument("--seed", type=int, help="base random seed (overrides SEED)")
    parser.add_argument("--workers", type=int, help="worker processes (overrides WORKERS)")
    parser.add_argument("--out", help="output directory (overrides OUT_DIR and PONV_OUT_DIR)")
    parser.add_argument("--verbose", action="store_true", help="DEBUG output on the console")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "workers": args.workers, "out_dir": args.out}
    # console-only logging until the configuration names the output directory
    early = logging.StreamHandler(sys.stdout)
    early.setFormatter(logging.Formatter('%(levelname)s - %(message)s'))
    logging.getLogger().addHandler(early)
    logging.getLogger().setLevel(logging.INFO)
    _installed_handlers.append(early)
    try:
        config = load_config(args.config, overrides)
    except PonvError as e:
        logger.error(f"Invalid configuration: {e}")
        return e.exit_code
    setup_logging(config.out_dir, args.verbose)
    run = Run(config)
    stages = STAGES if args.stage == "all" else (args.stage,)
    for stage in stages:
        logger.info(f"--- stage: {stage} ---")
        try:
            STAGE_FUNCTIONS[stage](run)
        except PonvError as e:
            if not isinstance(e, StageError) and e.exit_code == 1:
                e = StageError(stage, e)
            logger.error(f"Stage '{stage}' failed: {e}")
            return e.exit_code
        except Exception as e:
            logger.exception(f"Unexpected failure in stage '{stage}'")
            return StageError(stage, e).exit_code
    logger.info("===== ponv_tool finished =====")
    return 0


if __name__ == "__main__":
    sys.exit(main())
