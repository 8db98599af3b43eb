"""
Pipeline search by genetic programming over a small fixed grammar, followed by
a grid search over the winning model family's hyperparameters.

A genome has four genes (imputer, scaler, selector, model). Its canonical string
looks like

    imputer=median|scaler=standard|selector=top:10|model=forest(max_depth=4,n_estimators=25)

and is used for caching fitness, seeding, deduplication and reporting.
"""
import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigError, ContractError
from .model import MODEL_FAMILIES
from .pipeline import IMPUTERS, SCALERS, Pipeline
from .splitter import random_partition
from .utils import parallel_map, stable_seed

logger = logging.getLogger(__name__)

INNER_FOLDS = 3
GENE_NAMES = ("imputer", "scaler", "selector", "model")

DEFAULT_GRIDS = {
    "tree": {"max_depth": (3, 4, 6, 8), "min_samples_leaf": (1, 5, 20), "prune": (True,)},
    "forest": {"n_estimators": (10, 25, 50), "max_depth": (4, 6, 8), "max_features": ("sqrt",)},
    "boosting": {"n_estimators": (25, 50, 100), "max_depth": (2, 3), "learning_rate": (0.05, 0.1, 0.2)},
}


def _format_value(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text):
    if text == "none":
        return None
    if text in ("true", "false"):
        return text == "true"
    for convert in (int, float):
        try:
            return convert(text)
        except ValueError:
            pass
    return text


def grid_cells(grid):
    """Every hyperparameter combination, first key varying slowest, in declared value order."""
    keys = list(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


@dataclass(frozen=True)
class ModelGene:
    family: str
    params: Tuple[Tuple[str, object], ...] = ()

    @classmethod
    def of(cls, family, params):
        return cls(family, tuple(sorted(params.items())))

    def as_dict(self):
        return dict(self.params)

    def __str__(self):
        inner = ",".join(f"{k}={_format_value(v)}" for k, v in self.params)
        return f"{self.family}({inner})"


@dataclass(frozen=True)
class PipelineGenome:
    imputer: str
    scaler: str
    selector: Optional[int]
    model: ModelGene

    @property
    def genes(self):
        return (self.imputer, self.scaler, self.selector, self.model)

    def serialize(self):
        selector = "none" if self.selector is None else f"top:{self.selector}"
        return f"imputer={self.imputer}|scaler={self.scaler}|selector={selector}|model={self.model}"

    __str__ = serialize

    def to_pipeline(self, encoding="onehot"):
        return Pipeline(self.imputer, self.scaler, self.selector, self.model.family, self.model.as_dict(), encoding)


def parse_genome(text):
    """Inverse of PipelineGenome.serialize."""
    try:
        body = "".join(line for line in text.splitlines() if not line.startswith("#"))
        parts = dict(chunk.split("=", 1) for chunk in body.strip().split("|"))
        selector = parts["selector"]
        model_text = parts["model"]
        family, rest = model_text.split("(", 1)
        params = {}
        inner = rest.rstrip(")")
        if inner:
            for item in inner.split(","):
                key, value = item.split("=", 1)
                params[key] = _parse_value(value)
        return PipelineGenome(
            imputer=parts["imputer"],
            scaler=parts["scaler"],
            selector=None if selector == "none" else int(selector.split(":", 1)[1]),
            model=ModelGene.of(family, params),
        )
    except (KeyError, ValueError, IndexError) as e:
        raise ContractError(f"cannot parse genome '{text}': {e}") from e


@dataclass(frozen=True)
class Grammar:
    imputers: Tuple[str, ...] = IMPUTERS
    scalers: Tuple[str, ...] = SCALERS
    selectors: Tuple[Optional[int], ...] = (None, 5, 10, 20)
    families: Tuple[str, ...] = MODEL_FAMILIES
    grids: Dict[str, dict] = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_GRIDS.items()})

    def __post_init__(self):
        for name in ("imputers", "scalers", "selectors", "families"):
            if not getattr(self, name):
                raise ConfigError(f"GRAMMAR_{name.upper()}", "must list at least one option")
        for imputer in self.imputers:
            if imputer not in IMPUTERS:
                raise ConfigError("GRAMMAR_IMPUTERS", f"unknown imputer '{imputer}'")
        for scaler in self.scalers:
            if scaler not in SCALERS:
                raise ConfigError("GRAMMAR_SCALERS", f"unknown scaler '{scaler}'")
        for family in self.families:
            if family not in MODEL_FAMILIES:
                raise ConfigError("GRAMMAR_FAMILIES", f"unknown model family '{family}'")
            if family not in self.grids:
                raise ConfigError("GRAMMAR_FAMILIES", f"no hyperparameter grid for '{family}'")

    def model_options(self):
        return [ModelGene.of(family, cell) for family in self.families for cell in grid_cells(self.grids[family])]

    def options(self, gene):
        if gene == "imputer":
            return list(self.imputers)
        if gene == "scaler":
            return list(self.scalers)
        if gene == "selector":
            return list(self.selectors)
        return self.model_options()

    def default(self):
        """First option of every gene."""
        return PipelineGenome(*(self.options(g)[0] for g in GENE_NAMES))

    def random(self, rng):
        values = []
        for gene in GENE_NAMES:
            options = self.options(gene)
            values.append(options[int(rng.integers(len(options)))])
        return PipelineGenome(*values)

    def contains(self, genome):
        return all(value in self.options(gene) for gene, value in zip(GENE_NAMES, genome.genes))

    def size(self):
        return int(np.prod([len(self.options(g)) for g in GENE_NAMES]))


def mutate(g, grammar, rng):
    """Replace exactly one gene with a different grammar value (unchanged if no gene has an alternative)."""
    mutable = [i for i, gene in enumerate(GENE_NAMES) if len(grammar.options(gene)) > 1]
    if not mutable:
        return g
    i = mutable[int(rng.integers(len(mutable)))]
    gene = GENE_NAMES[i]
    alternatives = [v for v in grammar.options(gene) if v != g.genes[i]]
    return replace(g, **{gene: alternatives[int(rng.integers(len(alternatives)))]})


def crossover(a, b, rng):
    """Uniform crossover: every gene comes from a or b with equal probability."""
    picks = rng.random(len(GENE_NAMES)) < 0.5
    return PipelineGenome(*(ga if pick else gb for ga, gb, pick in zip(a.genes, b.genes, picks)))


@dataclass(frozen=True)
class EvolutionParams:
    population: int = 20
    generations: int = 10
    tournament: int = 3
    crossover_rate: float = 0.5
    mutation_rate: float = 0.9
    elitism: int = 1
    seed: int = 0

    def validate(self):
        if self.population < 2:
            raise ConfigError("EVOLVE_POPULATION", "must be >= 2")
        if self.generations < 0:
            raise ConfigError("EVOLVE_GENERATIONS", "must be >= 0")
        if self.tournament < 1:
            raise ConfigError("EVOLVE_TOURNAMENT", "must be >= 1")
        for name in ("crossover_rate", "mutation_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"EVOLVE_{name.upper()}", f"{value} outside [0, 1]")
        if not 0 <= self.elitism < self.population:
            raise ConfigError("EVOLVE_ELITISM", "must satisfy 0 <= elitism < population")


def cv_accuracy(genome, train, folds, target, seed, encoding="onehot"):
    """Mean inner-CV accuracy (threshold 0.5) of one genome. Only `train` is ever touched."""
    pipeline = genome.to_pipeline(encoding)
    genome_seed = stable_seed(seed, genome.serialize())
    accuracies = []
    for fold_no, (fit_idx, score_idx) in enumerate(folds):
        fitted = pipeline.fit(train.take(fit_idx), target, seed=stable_seed(genome_seed, fold_no))
        scored = train.take(score_idx)
        predictions = fitted.predict(scored)
        accuracies.append(float(np.mean(predictions == scored.target(target))))
    return float(np.mean(accuracies))


def _fitness_task(task):
    genome, train, folds, target, seed, encoding = task
    try:
        return cv_accuracy(genome, train, folds, target, seed, encoding)
    except Exception as e:
        logger.warning(f"Genome {genome.serialize()} failed during evaluation ({e}); fitness set to 0")
        return 0.0


@dataclass
class EvolutionResult:
    best: PipelineGenome
    fitness: float
    history: List[float]
    evaluated: Dict[str, float]


def evolve(train, inner_partition, grammar, params, target, encoding="onehot", workers=1):
    """
    Generational GA: tournament selection, uniform crossover, single-gene
    mutation and elitism. history[g] is the best fitness seen up to generation g
    (generation 0 is the initial population, seeded with the grammar default).
    """
    params.validate()
    if len(inner_partition.assignment) != train.n_rows:
        raise ContractError("inner partition must cover exactly the training cohort")
    folds = inner_partition.folds()
    rng = np.random.default_rng(stable_seed(params.seed, "evolve"))
    logger.info(f"Evolving over {grammar.size()} candidate pipelines for {target}")
    cache = {}

    def evaluate(population):
        pending = []
        for genome in population:
            key = genome.serialize()
            if key not in cache and key not in pending:
                pending.append(key)
        genomes = {g.serialize(): g for g in population}
        results = parallel_map(_fitness_task, [(genomes[k], train, folds, target, params.seed, encoding)
                                               for k in pending], workers)
        cache.update(zip(pending, results))
        return [cache[g.serialize()] for g in population]

    def ranked(population, fitness):
        order = sorted(range(len(population)), key=lambda i: (-fitness[i], population[i].serialize()))
        return [population[i] for i in order], [fitness[i] for i in order]

    population = [grammar.default()] + [grammar.random(rng) for _ in range(params.population - 1)]
    fitness = evaluate(population)
    population, fitness = ranked(population, fitness)
    best, best_fitness = population[0], fitness[0]
    history = [best_fitness]
    logger.info(f"Generation 0: best {best_fitness:.4f} {best.serialize()}")

    def tournament():
        contenders = rng.integers(0, len(population), size=params.tournament)
        return population[int(min(contenders))]  # population is ranked best-first

    for generation in range(1, params.generations + 1):
        offspring = list(population[:params.elitism])
        while len(offspring) < params.population:
            child = tournament()
            if rng.random() < params.crossover_rate:
                child = crossover(child, tournament(), rng)
            if rng.random() < params.mutation_rate:
                child = mutate(child, grammar, rng)
            offspring.append(child)
        population, fitness = ranked(offspring, evaluate(offspring))
        if fitness[0] > best_fitness:
            best, best_fitness = population[0], fitness[0]
        history.append(best_fitness)
        logger.info(f"Generation {generation}: best {best_fitness:.4f} {best.serialize()} "
                    f"({len(cache)} genomes evaluated)")

    return EvolutionResult(best, best_fitness, history, dict(cache))


@dataclass
class GridResult:
    best: dict
    fitness: float
    scores: List[Tuple[dict, float]]


def grid_search(family, grid, train, inner_partition, target, base=None, seed=0, encoding="onehot", workers=1):
    """
    Exhaustive search over `grid` for `family`, keeping the preprocessing genes of
    `base` (grammar defaults when None). Ties go to the first cell in declared order.
    """
    cells = grid_cells(grid)
    if not cells:
        raise ContractError("grid_search needs a non-empty grid")
    base = base or Grammar().default()
    folds = inner_partition.folds()
    genomes = [replace(base, model=ModelGene.of(family, cell)) for cell in cells]
    scores = parallel_map(_fitness_task, [(g, train, folds, target, seed, encoding) for g in genomes], workers)
    best_i = 0
    for i, value in enumerate(scores):
        if value > scores[best_i]:
            best_i = i
    logger.info(f"Grid search over {len(cells)} {family} cells: best {scores[best_i]:.4f} with {cells[best_i]}")
    return GridResult(cells[best_i], scores[best_i], list(zip(cells, scores)))


@dataclass
class SearchResult:
    genome: PipelineGenome
    fitness: float
    history: List[float]
    evolved: PipelineGenome


def search_pipeline(train, target, grammar, params, inner_k=INNER_FOLDS, encoding="onehot", workers=1):
    """Evolve a pipeline on the training cohort, then grid-tune its model genes."""
    inner = random_partition(train, inner_k, stable_seed(params.seed, "inner"))
    result = evolve(train, inner, grammar, params, target, encoding, workers)
    family = result.best.model.family
    tuned = grid_search(family, grammar.grids[family], train, inner, target, base=result.best,
                        seed=params.seed, encoding=encoding, workers=workers)
    genome, fitness = result.best, result.fitness
    if tuned.fitness > fitness:
        genome, fitness = replace(result.best, model=ModelGene.of(family, tuned.best)), tuned.fitness
    return SearchResult(genome, fitness, result.history, result.best)


@dataclass(frozen=True)
class SearchFactory:
    """Per-fold pipeline factory: search on the training cohort, then refit the winner on all of it."""
    target: str
    grammar: Grammar
    params: EvolutionParams
    inner_k: int = INNER_FOLDS
    encoding: str = "onehot"

    def __call__(self, train, seed):
        params = replace(self.params, seed=seed)
        found = search_pipeline(train, self.target, self.grammar, params, self.inner_k, self.encoding)
        fitted = found.genome.to_pipeline(self.encoding).fit(train, self.target, seed=seed)
        fitted.description = found.genome.serialize()
        return fitted


@dataclass(frozen=True)
class GenomeFactory:
    """Per-fold factory that retrains one fixed genome."""
    target: str
    genome: PipelineGenome
    encoding: str = "onehot"

    def __call__(self, train, seed):
        fitted = self.genome.to_pipeline(self.encoding).fit(train, self.target, seed=seed)
        fitted.description = self.genome.serialize()
        return fitted
