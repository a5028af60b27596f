"""Genetic-algorithm wrapper selection of fixed-size feature subsets.

An individual is a set of ``G`` distinct feature indices. Fitness is the
held-out accuracy of a linear classifier trained on the selected columns,
averaged over a few stratified inner splits of the data it is given.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from emopair.classifiers import TrainConfig, data_loss, fit_linear_batch, linear_targets
from emopair.dataset import DataError
from emopair.seeds import derive_seed, fingerprint

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True, order=True)
class Genome:
    """Distinct feature indices in ``[0, feature_count)``.

    ``indices`` is the ascending canonical form used for identity, caching,
    ranking and serialization. ``genes`` keeps the positional order the
    operators act on, so crossover is not biased by index magnitude.
    """

    indices: tuple
    feature_count: int
    genes: tuple = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        raw = tuple(int(i) for i in (self.indices if self.genes is None else self.genes))
        idx = tuple(sorted(raw))
        if len(set(idx)) != len(idx):
            raise ValueError(f"genome has duplicate indices: {idx}")
        if idx and (idx[0] < 0 or idx[-1] >= self.feature_count):
            raise ValueError(f"genome indices out of range [0, {self.feature_count})")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "genes", raw)

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


@dataclass(frozen=True)
class GaConfig:
    genome_size: int = 50
    population_size: int = 100
    crossover_prob: float = 0.8
    mutation_prob: float = 0.1
    # "offspring": one substitution with mutation_prob per child; "gene": each gene independently.
    mutation_mode: str = "offspring"
    max_generations: int = 300
    stall_generations: int = 100
    seed: int = 0
    classifier: str = "lr"
    inner_test_fraction: float = 0.2
    inner_repeats: int = 3
    mean_fitness_threshold: Optional[float] = None
    # Ordering among equal-accuracy genomes: "index" or "loss" (held-out loss first).
    tie_break: str = "index"
    fitness_train: TrainConfig = TrainConfig(learning_rate=1.0, max_epochs=100, tolerance=1e-5)

    def __post_init__(self):
        if not (0.0 <= self.crossover_prob <= 1.0 and 0.0 <= self.mutation_prob <= 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.genome_size < 1 or self.max_generations < 1 or self.stall_generations < 1:
            raise ValueError("genome_size, max_generations and stall_generations must be >= 1")
        if self.mutation_mode not in ("offspring", "gene"):
            raise ValueError(f"mutation_mode must be 'offspring' or 'gene', got {self.mutation_mode!r}")
        if self.tie_break not in ("index", "loss"):
            raise ValueError(f"tie_break must be 'index' or 'loss', got {self.tie_break!r}")
        if self.classifier not in ("lr", "svm"):
            raise ValueError(f"GA fitness classifier must be 'lr' or 'svm', got {self.classifier!r}")
        if isinstance(self.fitness_train, dict):
            object.__setattr__(self, "fitness_train", TrainConfig(**self.fitness_train))


@dataclass
class Population:
    genomes: list
    fitness: list
    generation: int
    best: tuple  # (genome, fitness, generation found)


@dataclass
class GaResult:
    best: Genome
    best_fitness: float
    found_at: int
    history: list  # (generation, best fitness so far, mean population fitness)
    evaluations: int
    population: Population = field(repr=False, default=None)

    @property
    def generations(self):
        return len(self.history)


# ---------------------------------------------------------------------------
# Operators


def init_population(config, n_features, seed):
    """``population_size`` uniform random ``genome_size``-subsets of ``range(n_features)``."""
    G = config.genome_size
    if G > n_features:
        raise ValueError(f"genome_size {G} exceeds the {n_features} available features")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return [Genome(rng.choice(n_features, G, replace=False), n_features) for _ in range(config.population_size)]


def _repair(raw, n_features, rng):
    present = set(raw)
    seen = set()
    child = []
    for v in raw:
        if v in seen:
            free = np.setdiff1d(np.arange(n_features), np.fromiter(present, dtype=np.int64))
            v = int(rng.choice(free))
            present.add(v)
        seen.add(v)
        child.append(v)
    return child


def two_point_crossover(a, b, rng, cuts=None):
    """Splice ``a[:i] + b[i:j] + a[j:]`` on the positional gene lists.

    Cut points satisfy ``0 <= i < j <= G``. Any later duplicate is replaced by
    a uniform random index not yet in the child, keeping the size at ``G``.
    """
    if len(a) != len(b):
        raise ValueError("parents differ in genome size")
    G = len(a)
    if cuts is None:
        i, j = sorted(int(c) for c in rng.choice(G + 1, 2, replace=False))
    else:
        i, j = cuts
        if not 0 <= i < j <= G:
            raise ValueError(f"invalid cut points {cuts} for genome size {G}")
    raw = list(a.genes[:i]) + list(b.genes[i:j]) + list(a.genes[j:])
    return Genome(_repair(raw, a.feature_count, rng), a.feature_count)


def substitution_mutate(g, rng, probability, per_gene=False):
    """With ``probability``, swap one random gene for an index outside the genome.

    With ``per_gene`` every position is substituted independently with
    ``probability`` instead.
    """
    D = g.feature_count
    if len(g) >= D or probability <= 0.0:
        return g
    if per_gene:
        positions = np.flatnonzero(rng.random(len(g)) < probability)
    elif rng.random() < probability:
        positions = [int(rng.integers(len(g)))]
    else:
        positions = []
    if len(positions) == 0:
        return g
    genes = list(g.genes)
    for pos in positions:
        outside = np.setdiff1d(np.arange(D), np.asarray(genes))
        genes[pos] = int(rng.choice(outside))
    return Genome(genes, D)


def subset_overlap(a, b):
    return len(set(a) & set(b))


# ---------------------------------------------------------------------------
# Fitness


def stratified_split(y, test_fraction, rng):
    """Row indices ``(train, test)`` keeping every class on both sides."""
    y = np.asarray(y)
    train, test = [], []
    for cls in np.unique(y):
        rows = np.flatnonzero(y == cls)
        if rows.size < 2:
            raise DataError(f"inner split leaves class {cls} empty ({rows.size} example)")
        rows = rows[rng.permutation(rows.size)]
        k = min(max(1, int(round(test_fraction * rows.size))), rows.size - 1)
        test.extend(rows[:k])
        train.extend(rows[k:])
    return np.sort(np.array(train)), np.sort(np.array(test))


class FitnessEvaluator:
    """Memoized wrapper fitness for one dataset and one GA configuration.

    Genomes are scored in batches: the models for every (inner split, genome)
    combination train together in one vectorized descent run. The mean
    held-out loss is cached next to the accuracy for the optional ``loss``
    tie-break; accuracy on small validation sets saturates at 1.0 early.
    """

    def __init__(self, data, config):
        if data.labels is None:
            raise DataError("fitness data has no labels")
        self.data = data
        self.config = config
        self.y = data.label_indices
        self.n_classes = len(data.universe)
        if self.n_classes == 2:
            self.objective = "logistic" if config.classifier == "lr" else "hinge"
        else:
            self.objective = "softmax" if config.classifier == "lr" else "hinge"
        rng = np.random.default_rng(derive_seed(config.seed, "inner-splits"))
        self.splits = [stratified_split(self.y, config.inner_test_fraction, rng) for _ in range(config.inner_repeats)]
        self.cache = {}
        self.evaluations = 0
        self.speakers_seen = frozenset(data.speakers) if data.speakers is not None else frozenset()

    def _score(self, index_matrix):
        X = self.data.features
        B = index_matrix.shape[0]
        Xtr = np.concatenate([X[tr][:, index_matrix].transpose(1, 0, 2) for tr, _ in self.splits])
        ytr = np.concatenate([np.broadcast_to(self.y[tr], (B, tr.size)) for tr, _ in self.splits])
        W, c = fit_linear_batch(self.objective, Xtr, ytr, self.n_classes, self.config.fitness_train)
        acc = np.zeros(B)
        loss = np.zeros(B)
        for r, (_, te) in enumerate(self.splits):
            Xte = X[te][:, index_matrix].transpose(1, 0, 2)
            Z = Xte @ W[r * B:(r + 1) * B] + c[r * B:(r + 1) * B, None, :]
            pred = (Z[..., 0] > 0).astype(np.int64) if Z.shape[2] == 1 else np.argmax(Z, axis=2)
            acc += np.mean(pred == self.y[te][None, :], axis=1)
            loss += data_loss(self.objective, Z, linear_targets(self.objective, self.y[te], self.n_classes))
        return acc / len(self.splits), loss / len(self.splits)

    def evaluate(self, genomes):
        """Fitness (mean held-out accuracy) of each genome, in input order."""
        keys = [g.indices for g in genomes]
        todo = sorted({k for k in keys if k not in self.cache})
        if todo:
            acc, loss = self._score(np.array(todo, dtype=np.int64))
            for k, a, l in zip(todo, acc, loss):
                self.cache[k] = (float(a), float(l))
            self.evaluations += len(todo)
        return [self.cache[k][0] for k in keys]

    def held_out_loss(self, genome):
        return self.cache[genome.indices][1]

    def __call__(self, genome):
        return self.evaluate([genome])[0]


_EVALUATORS = {}


def fitness(genome, pair_data, config):
    """Wrapper fitness of one genome; memoized across calls."""
    key = (pair_data.fingerprint(), fingerprint(config))
    ev = _EVALUATORS.get(key)
    if ev is None:
        if len(_EVALUATORS) > 64:
            _EVALUATORS.clear()
        ev = _EVALUATORS[key] = FitnessEvaluator(pair_data, config)
    return ev(genome)


# ---------------------------------------------------------------------------
# Evolution loop


def _survivors(genomes, fits, P, rank_key):
    order = sorted(range(len(genomes)), key=lambda i: rank_key(genomes[i], fits[i]))
    seen, first, dups = set(), [], []
    for i in order:
        (dups if genomes[i].indices in seen else first).append(i)
        seen.add(genomes[i].indices)
    keep = (first + dups)[:P]
    return [genomes[i] for i in keep], [fits[i] for i in keep]


def run_ga(pair_data, config, evaluator=None, progress=None):
    """Evolve feature subsets for ``pair_data``; return the best genome ever seen.

    The initial population counts as generation 1. Each further generation
    breeds ``P`` offspring (binary tournaments, crossover with
    ``crossover_prob`` else a copy of the first parent, then mutation) and
    keeps the best ``P`` distinct genomes of parents plus offspring (equal
    fitness ordered per ``config.tie_break``). Runs stop
    after ``max_generations`` or after ``stall_generations`` generations
    without a new best.
    """
    D = pair_data.n_features
    ev = evaluator or FitnessEvaluator(pair_data, config)
    rng = np.random.default_rng(derive_seed(config.seed, "ga"))
    P = config.population_size

    if config.tie_break == "loss":
        def rank_key(genome, fit):
            return (-fit, ev.held_out_loss(genome), genome.indices)
    else:
        def rank_key(genome, fit):
            return (-fit, genome.indices)

    genomes = init_population(config, D, rng)
    fits = ev.evaluate(genomes)
    genomes, fits = _survivors(genomes, fits, P, rank_key)
    generation = 1
    best, best_fit, found = genomes[0], fits[0], 1
    history = [(1, best_fit, float(np.mean(fits)))]
    stall = 0

    def tournament():
        i, j = rng.integers(len(genomes), size=2)
        return genomes[min(i, j, key=lambda k: rank_key(genomes[k], fits[k]))]

    while generation < config.max_generations and stall < config.stall_generations:
        if config.mean_fitness_threshold is not None and history[-1][2] >= config.mean_fitness_threshold:
            break
        offspring = []
        for _ in range(P):
            a, b = tournament(), tournament()
            child = two_point_crossover(a, b, rng) if rng.random() < config.crossover_prob else a
            offspring.append(substitution_mutate(child, rng, config.mutation_prob, config.mutation_mode == "gene"))
        off_fits = ev.evaluate(offspring)
        genomes, fits = _survivors(genomes + offspring, fits + off_fits, P, rank_key)
        generation += 1
        if fits[0] > best_fit:
            stall = 0
        else:
            stall += 1
        if rank_key(genomes[0], fits[0]) < rank_key(best, best_fit):
            best, best_fit, found = genomes[0], fits[0], generation
        history.append((generation, best_fit, float(np.mean(fits))))
        log.debug("generation %d: best %.4f mean %.4f", generation, best_fit, history[-1][2])
        if progress is not None:
            progress(generation, best_fit, history[-1][2])

    pop = Population(genomes, fits, generation, (best, best_fit, found))
    return GaResult(best, best_fit, found, history, ev.evaluations, pop)


# ---------------------------------------------------------------------------
# Persistence


def genome_to_json(genome, provenance, config=None, seed=None):
    return {
        "schema_version": SCHEMA_VERSION,
        "feature_count": genome.feature_count,
        "indices": list(genome.indices),
        "provenance": provenance if isinstance(provenance, str) else list(provenance),
        "config_fingerprint": None if config is None else fingerprint(config),
        "seed": seed,
    }


def genome_from_json(doc):
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported genome schema_version {doc.get('schema_version')}")
    return Genome(doc["indices"], doc["feature_count"])


def save_genome(path, genome, provenance, config=None, seed=None):
    Path(path).write_text(json.dumps(genome_to_json(genome, provenance, config, seed), indent=1) + "\n", encoding="utf-8")


def load_genome(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return genome_from_json(doc), doc
