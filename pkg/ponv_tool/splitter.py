"""
Balanced k-cohort partitioning of a Dataset.

Cohorts have sizes differing by at most one and are chosen so their joint
(age-bin x sex) distributions are as close as possible. The search is a
directed bee colony: employed bees take the best of several record swaps around
their site, onlookers revisit promising sites, and scouts replace sites that
stopped improving.
"""
import time
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError, ContractError
from .utils import stable_seed

logger = logging.getLogger(__name__)

# 10-year bins from 18; everything from 98 up shares the last, open-ended bin.
AGE_EDGES = np.arange(18, 99, 10)
N_AGE_BINS = len(AGE_EDGES)


def record_cells(d, stratify_smoking=False):
    """
    Histogram cell of every record: age bin x sex (x smoking when stratified).
    Records missing any stratification input share one extra 'missing' cell,
    which is always the last one. Returns (cells, n_cells).
    """
    for name in ("AGE", "GENDER") + (("SMOKE_STAT",) if stratify_smoking else ()):
        if name not in d.schema:
            raise ContractError(f"cohort balancing needs the {name} column")
    age = d.column("AGE")
    sex = d.column("GENDER")
    missing = np.isnan(age) | np.isnan(sex)
    age_bin = np.clip(np.searchsorted(AGE_EDGES, np.nan_to_num(age), side="right") - 1, 0, N_AGE_BINS - 1)
    cells = age_bin * 2 + np.nan_to_num(sex).astype(np.int64)
    n_cells = N_AGE_BINS * 2
    if stratify_smoking:
        smoke = d.column("SMOKE_STAT")
        missing |= np.isnan(smoke)
        cells = cells * 2 + np.nan_to_num(smoke).astype(np.int64)
        n_cells *= 2
    cells = np.where(missing, n_cells, cells).astype(np.int64)
    return cells, n_cells + 1


def cohort_histograms(assignment, cells, k, n_cells):
    counts = np.zeros((k, n_cells), dtype=np.int64)
    np.add.at(counts, (assignment, cells), 1)
    return counts


def histogram_distance(counts):
    """Mean pairwise L1 distance between the row-normalised histograms."""
    sizes = counts.sum(axis=1)
    if np.any(sizes == 0):
        raise ContractError("every cohort needs at least one record")
    hist = counts / sizes[:, None]
    k = hist.shape[0]
    total = 0.0
    for i in range(k - 1):
        total += np.abs(hist[i + 1:] - hist[i]).sum()
    return float(total / (k * (k - 1) / 2))


@dataclass
class OptimizerTrace:
    initial_objective: float
    history: Tuple[float, ...]
    iterations: int
    timed_out: bool = False


@dataclass
class Partition:
    """Cohort index per record plus cached per-cohort cell counts."""
    k: int
    assignment: np.ndarray
    counts: np.ndarray
    trace: Optional[OptimizerTrace] = field(default=None, compare=False)

    @classmethod
    def from_assignment(cls, assignment, cells, k, n_cells):
        assignment = np.asarray(assignment, dtype=np.int64)
        return cls(k, assignment, cohort_histograms(assignment, cells, k, n_cells))

    @property
    def sizes(self):
        return np.bincount(self.assignment, minlength=self.k)

    def cohort(self, j):
        return np.flatnonzero(self.assignment == j)

    def folds(self):
        """(train indices, test indices) with cohort j held out, for j = 0..k-1."""
        return [(np.flatnonzero(self.assignment != j), self.cohort(j)) for j in range(self.k)]

    def objective(self):
        return histogram_distance(self.counts)

    def validate(self, cells):
        sizes = self.sizes
        if sizes.max() - sizes.min() > 1:
            raise ContractError(f"cohort sizes {sizes.tolist()} are not balanced")
        if self.assignment.min() < 0 or self.assignment.max() >= self.k:
            raise ContractError("assignment outside [0, k)")
        if not np.array_equal(self.counts, cohort_histograms(self.assignment, cells, self.k, self.counts.shape[1])):
            raise ContractError("cached histograms disagree with the assignment")

    def to_frame(self, record_ids):
        return pd.DataFrame({"record_id": record_ids, "fold": self.assignment})


def _balanced_assignment(n, k, rng):
    assignment = np.empty(n, dtype=np.int64)
    assignment[rng.permutation(n)] = np.arange(n) % k
    return assignment


def random_partition(d, k, seed, stratify_smoking=False):
    """Uniformly random size-balanced assignment, deterministic per seed."""
    n = d.n_rows
    if k < 1 or n < k:
        raise ContractError(f"cannot split {n} records into {k} cohorts")
    if "AGE" in d.schema and "GENDER" in d.schema:
        cells, n_cells = record_cells(d, stratify_smoking)
    else:
        cells, n_cells = np.zeros(n, dtype=np.int64), 1
    rng = np.random.default_rng(stable_seed(seed, "random_partition"))
    return Partition.from_assignment(_balanced_assignment(n, k, rng), cells, k, n_cells)


def cohort_distance(p, d, stratify_smoking=False):
    """
    Mean over cohort pairs of the L1 distance between normalised joint
    (age-bin x sex) histograms. 0 means every cohort has the same distribution;
    2 is the maximum (disjoint supports).
    """
    if len(p.assignment) != d.n_rows:
        raise ContractError("partition and dataset sizes differ")
    cells, n_cells = record_cells(d, stratify_smoking)
    return histogram_distance(cohort_histograms(p.assignment, cells, p.k, n_cells))


@dataclass(frozen=True)
class BeeColonyParams:
    colony_size: int = 20
    scouts: int = 4
    neighborhood: int = 10
    exponent: float = 2.0
    abandonment: int = 15
    max_iterations: int = 500
    seed: int = 0
    time_budget: Optional[float] = None
    stratify_smoking: bool = False
    debug: bool = False

    def validate(self):
        for name in ("colony_size", "scouts", "neighborhood", "abandonment", "max_iterations"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.exponent < 0:
            raise ConfigError("exponent", "must be >= 0")
        if self.time_budget is not None and self.time_budget <= 0:
            raise ConfigError("time_budget", "must be positive")


class _Site:
    def __init__(self, assignment, counts, objective, rng):
        self.assignment = assignment
        self.counts = counts
        self.objective = objective
        self.rng = rng
        self.trials = 0


class _Colony:
    def __init__(self, cells, n_cells, k, params):
        self.cells = cells
        self.n_cells = n_cells
        self.k = k
        self.params = params
        self.n = len(cells)

    def fresh_site(self, rng):
        assignment = _balanced_assignment(self.n, self.k, rng)
        counts = cohort_histograms(assignment, self.cells, self.k, self.n_cells)
        return _Site(assignment, counts, histogram_distance(counts), rng)

    def explore(self, site):
        """Best of `neighborhood` random cross-cohort swaps; applied only if it improves the site."""
        best_gain, best_move = 0.0, None
        for _ in range(self.params.neighborhood):
            a, b = site.rng.integers(0, self.n, size=2)
            ca, cb = site.assignment[a], site.assignment[b]
            if ca == cb or self.cells[a] == self.cells[b]:
                continue
            counts = site.counts.copy()
            counts[ca, self.cells[a]] -= 1
            counts[ca, self.cells[b]] += 1
            counts[cb, self.cells[b]] -= 1
            counts[cb, self.cells[a]] += 1
            gain = site.objective - histogram_distance(counts)
            if gain > best_gain:
                best_gain, best_move = gain, (a, b, counts)
        if best_move is None:
            site.trials += 1
            return False
        a, b, counts = best_move
        site.assignment[a], site.assignment[b] = site.assignment[b], site.assignment[a]
        site.counts = counts
        site.objective = histogram_distance(counts)
        site.trials = 0
        if self.params.debug:
            Partition(self.k, site.assignment, site.counts).validate(self.cells)
        return True


def dbc_optimize(d, k, params=None):
    """
    Directed bee colony search for the balanced partition with the smallest
    cohort_distance. The result carries an OptimizerTrace with the per-iteration
    best objective; when the time budget runs out the best partition so far is
    returned with trace.timed_out set.
    """
    params = params or BeeColonyParams()
    params.validate()
    n = d.n_rows
    if k < 2 or n < k:
        raise ContractError(f"cannot split {n} records into {k} cohorts")
    cells, n_cells = record_cells(d, params.stratify_smoking)
    colony = _Colony(cells, n_cells, k, params)
    sites = [colony.fresh_site(np.random.default_rng(stable_seed(params.seed, "site", i)))
             for i in range(params.colony_size)]
    coordinator = np.random.default_rng(stable_seed(params.seed, "onlookers"))

    best = min(sites, key=lambda s: s.objective)
    best_assignment, best_objective = best.assignment.copy(), best.objective
    initial = best_objective
    history = []
    timed_out = False
    start = time.monotonic()
    logger.info(f"Bee colony split: n={n}, k={k}, colony={params.colony_size}, initial objective {initial:.6f}")

    iteration = 0
    for iteration in range(1, params.max_iterations + 1):
        for site in sites:
            colony.explore(site)

        fitness = np.array([(1.0 / (1.0 + s.objective)) ** params.exponent for s in sites])
        chosen = coordinator.choice(len(sites), size=len(sites), p=fitness / fitness.sum())
        for i in chosen:
            colony.explore(sites[i])

        for site in sites:
            if site.objective < best_objective:
                best_assignment, best_objective = site.assignment.copy(), site.objective

        stale = sorted((i for i, s in enumerate(sites) if s.trials > params.abandonment),
                       key=lambda i: (-sites[i].trials, i))
        for i in stale[:params.scouts]:
            sites[i] = colony.fresh_site(np.random.default_rng(stable_seed(params.seed, "scout", iteration, i)))
            if sites[i].objective < best_objective:
                best_assignment, best_objective = sites[i].assignment.copy(), sites[i].objective

        history.append(best_objective)
        logger.debug(f"Iteration {iteration}: best objective {best_objective:.6f}")
        if best_objective == 0.0:
            break
        if params.time_budget is not None and time.monotonic() - start > params.time_budget:
            timed_out = True
            logger.warning(f"Bee colony time budget of {params.time_budget}s exhausted after "
                           f"{iteration} iterations; returning best partition so far")
            break

    result = Partition.from_assignment(best_assignment, cells, k, n_cells)
    result.trace = OptimizerTrace(initial, tuple(history), iteration, timed_out)
    logger.info(f"Bee colony split finished after {iteration} iterations: objective {best_objective:.6f}")
    return result


def stratified_report(p, d):
    """Per-cohort size, mean age, female share and smoker share."""
    rows = []
    for j in range(p.k):
        idx = p.cohort(j)
        row = {"cohort": j, "size": int(idx.size)}
        for column, key in (("AGE", "mean_age"), ("GENDER", "female_share"), ("SMOKE_STAT", "smoker_share")):
            if column in d.schema:
                values = d.column(column)[idx]
                row[key] = float(np.nanmean(values)) if np.any(~np.isnan(values)) else float("nan")
        rows.append(row)
    return pd.DataFrame(rows)
