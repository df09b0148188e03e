"""Genetic algorithm with hierarchical evaluation and tree-structured mutation.

Each generation builds a full population of offspring from one archive
parent and one population parent, removes duplicates, ranks every offspring
with a cheap fast evaluation, and spends full evaluations only on the few
most promising candidates. A bounded elite archive of fully evaluated
individuals carries the best settings from one generation to the next.
"""

from __future__ import annotations

import itertools
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .errors import EvaluationError, MissingFullFitness, UniquenessUnreachable
from .evaluation import Evaluator, EvaluationRequest, derive_seed, select_candidates
from .selection import roulette_select, selection_weights
from .space import Genotype, SearchSpace, random_genotype
from .tree import SpaceTree, pathway, tsm_mutate_individual, tsm_sample_individual

logger = logging.getLogger(__name__)

MUTATION_MODES = ("tsm", "single_point")
CANDIDATE_CRITERIA = ("fast_fitness", "slope")


@dataclass
class Individual:
    genotype: Genotype
    fast_fitness: float | None = None
    full_fitness: float | None = None
    birth_generation: int = 0

    @property
    def bits(self) -> str:
        return self.genotype.bits

    def to_dict(self, space: SearchSpace) -> dict:
        return {
            "bits": self.genotype.bits,
            "indices": list(self.genotype.indices),
            "values": space.decode_values(self.genotype),
            "fast_fitness": self.fast_fitness,
            "full_fitness": self.full_fitness,
            "birth_generation": self.birth_generation,
        }

    @classmethod
    def from_dict(cls, data: dict, space: SearchSpace) -> "Individual":
        g = space.genotype(data["indices"])
        if g.bits != data["bits"]:
            raise ValueError(f"bits {data['bits']} disagree with indices {data['indices']}")
        return cls(g, data.get("fast_fitness"), data.get("full_fitness"), int(data.get("birth_generation", 0)))


@dataclass
class EliteArchive:
    """Duplicate-free store of the best fully evaluated individuals, best first."""

    capacity: int
    members: list[Individual] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("archive capacity must be positive")

    def __len__(self) -> int:
        return len(self.members)

    @property
    def best(self) -> Individual:
        return self.members[0]

    def fitnesses(self) -> list[float]:
        return [m.full_fitness for m in self.members]


@dataclass
class GaConfig:
    """Settings of one GA run.

    Attributes:
        population_size: Individuals per generation.
        max_generations: Number of generations after initialisation.
        crossover_prob: Chance that an offspring comes from crossover.
        mutation_prob: Chance, once per offspring, that it is mutated.
        archive_ratio: Elite archive size as a fraction of the population.
        candidate_count: Offspring promoted to full evaluation each
            generation. Defaults to 20% of the population.
        fast_fraction: Budget fraction of a fast evaluation.
        mutation_mode: ``"tsm"`` or ``"single_point"``.
        seed: Seed of the driver's random stream.
        count_fast_evals: Also bump leaf visit counters on fast evaluations.
        candidate_criterion: ``"fast_fitness"`` ranks offspring by their fast
            fitness; ``"slope"`` runs a second, earlier fast evaluation and
            prefers the steepest improvement between the two.
    """

    population_size: int = 20
    max_generations: int = 10
    crossover_prob: float = 0.8
    mutation_prob: float = 0.2
    archive_ratio: float = 0.5
    candidate_count: int | None = None
    fast_fraction: float = 0.1
    mutation_mode: str = "tsm"
    seed: int = 0
    count_fast_evals: bool = False
    candidate_criterion: str = "fast_fitness"

    def __post_init__(self) -> None:
        if self.population_size < 1:
            raise ValueError(f"population_size must be positive, got {self.population_size}")
        if self.max_generations < 1:
            raise ValueError(f"max_generations must be positive, got {self.max_generations}")
        for name in ("crossover_prob", "mutation_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if not 0.0 < self.archive_ratio <= 1.0:
            raise ValueError(f"archive_ratio must be in (0, 1], got {self.archive_ratio}")
        if not 0.0 < self.fast_fraction <= 1.0:
            raise ValueError(f"fast_fraction must be in (0, 1], got {self.fast_fraction}")
        if self.mutation_mode not in MUTATION_MODES:
            raise ValueError(f"mutation_mode must be one of {MUTATION_MODES}, got {self.mutation_mode!r}")
        if self.candidate_criterion not in CANDIDATE_CRITERIA:
            raise ValueError(f"candidate_criterion must be one of {CANDIDATE_CRITERIA}")
        if self.candidate_count is None:
            self.candidate_count = max(1, round(0.2 * self.population_size))
        if not 1 <= self.candidate_count <= self.population_size:
            raise ValueError(
                f"candidate_count must be in 1..population_size, got {self.candidate_count}"
            )

    @property
    def archive_capacity(self) -> int:
        return max(1, round(self.archive_ratio * self.population_size))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GaConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown GA settings: {sorted(unknown)}")
        return cls(**data)


# --------------------------------------------------------------------------
# Operators


def single_point_crossover(
    space: SearchSpace, a: Genotype, b: Genotype, rng: np.random.Generator, cut: int | None = None
) -> tuple[Genotype, Genotype]:
    """Swap every bit right of a uniformly drawn cut ``p`` in ``1 .. L-1``.

    The first child keeps ``a``'s left segment. Out-of-grid fragments are
    clamped back onto the grid.
    """
    n = len(a.bits)
    if len(b.bits) != n:
        raise ValueError("parents have different code lengths")
    if n < 2:
        return a, b
    if cut is None:
        cut = int(rng.integers(1, n))
    elif not 1 <= cut <= n - 1:
        raise ValueError(f"cut must be in 1..{n - 1}")
    return (
        space.from_bits(a.bits[:cut] + b.bits[cut:]),
        space.from_bits(b.bits[:cut] + a.bits[cut:]),
    )


def flip_bit(bits: str, position: int) -> str:
    return bits[:position] + ("1" if bits[position] == "0" else "0") + bits[position + 1 :]


def single_point_mutation(
    space: SearchSpace, g: Genotype, rng: np.random.Generator, position: int | None = None
) -> Genotype:
    """Flip one uniformly chosen bit, then clamp back onto the grid."""
    if position is None:
        position = int(rng.integers(len(g.bits)))
    return space.from_bits(flip_bit(g.bits, position))


def mutate(
    g: Genotype, tree: SpaceTree, space: SearchSpace, mode: str, rng: np.random.Generator
) -> Genotype:
    if mode == "tsm":
        return tsm_mutate_individual(tree, space, g, rng)
    return single_point_mutation(space, g, rng)


def make_offspring(
    parent_a: Individual,
    parent_b: Individual,
    tree: SpaceTree,
    space: SearchSpace,
    config: GaConfig,
    rng: np.random.Generator,
) -> Genotype:
    g = parent_a.genotype
    # both coins are always tossed so the stream position does not depend on outcomes
    do_cross = rng.random() < config.crossover_prob
    if do_cross:
        g, _ = single_point_crossover(space, parent_a.genotype, parent_b.genotype, rng)
    if rng.random() < config.mutation_prob:
        g = mutate(g, tree, space, config.mutation_mode, rng)
    return g


def enforce_population_uniqueness(
    population: Sequence[Genotype],
    tree: SpaceTree,
    space: SearchSpace,
    mode: str,
    rng: np.random.Generator,
    max_retries: int = 1000,
) -> list[Genotype]:
    """Replace every genotype that repeats an earlier one.

    In ``tsm`` mode a replacement is sampled from a tree-selected subspace;
    in ``single_point`` mode the duplicate is bit-flipped repeatedly until
    it is new. After ``max_retries`` failed attempts uniform random draws
    are tried, and as a last resort the first unused grid point is taken.

    Raises:
        UniquenessUnreachable: the grid holds fewer points than the population.
    """
    if len(population) > space.grid_size:
        raise UniquenessUnreachable(
            f"population of {len(population)} cannot be unique in a grid of {space.grid_size} points"
        )
    seen: set[str] = set()
    out: list[Genotype] = []
    for g in population:
        if g.bits in seen:
            g = _replacement(g, seen, tree, space, mode, rng, max_retries)
        seen.add(g.bits)
        out.append(g)
    return out


def _replacement(g, seen, tree, space, mode, rng, max_retries) -> Genotype:
    candidate = g
    for _ in range(max_retries):
        if mode == "tsm":
            candidate = tsm_sample_individual(tree, space, rng)
        else:
            candidate = single_point_mutation(space, candidate, rng)
        if candidate.bits not in seen:
            return candidate
    for _ in range(max_retries):
        candidate = random_genotype(space, rng)
        if candidate.bits not in seen:
            return candidate
    for indices in itertools.product(*(range(d.grid_count) for d in space.dims)):
        candidate = space.genotype(indices)
        if candidate.bits not in seen:
            return candidate
    raise UniquenessUnreachable("no unused grid point left")


def update_archive(archive: EliteArchive, candidates: Sequence[Individual]) -> EliteArchive:
    """Merge fully evaluated candidates into the archive.

    Duplicated genotypes keep only their best full fitness (the incumbent
    wins ties); the result is sorted best first and cut to capacity.
    """
    for c in candidates:
        if c.full_fitness is None:
            raise MissingFullFitness(f"candidate {c.bits} has no full fitness")
    best: dict[str, Individual] = {}
    for ind in itertools.chain(archive.members, candidates):
        current = best.get(ind.bits)
        if current is None or ind.full_fitness < current.full_fitness:
            best[ind.bits] = ind
    ranked = sorted(best.values(), key=lambda ind: ind.full_fitness)
    return EliteArchive(archive.capacity, ranked[: archive.capacity])


# --------------------------------------------------------------------------
# Run record


@dataclass
class RunRecord:
    """Everything needed to audit or replay one run.

    ``meta`` holds wall-clock data and the worker count; it is the only
    part allowed to differ between two runs with the same config and seed.
    """

    config: dict
    seed: int
    history: list[dict]
    best: dict
    archive: list[dict]
    tree: dict
    evaluations: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def payload(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "history": self.history,
            "best": self.best,
            "archive": self.archive,
            "tree": self.tree,
            "evaluations": self.evaluations,
        }

    def to_dict(self) -> dict:
        return {**self.payload(), "meta": self.meta}

    def payload_json(self) -> str:
        return json.dumps(self.payload(), sort_keys=True, indent=2)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @property
    def space(self) -> SearchSpace:
        return SearchSpace.from_list(self.config["space"])

    @property
    def best_values(self) -> dict:
        return dict(self.best["values"])

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        try:
            record = cls(
                config=data["config"],
                seed=int(data["seed"]),
                history=list(data["history"]),
                best=data["best"],
                archive=list(data["archive"]),
                tree=data["tree"],
                evaluations=data.get("evaluations", {}),
                meta=data.get("meta", {}),
            )
        except KeyError as exc:
            raise ValueError(f"run record lacks field {exc}") from exc
        record.validate()
        return record

    def validate(self) -> None:
        space = self.space
        ga = GaConfig.from_dict(self.config["ga"])
        if len(self.history) > ga.max_generations:
            raise ValueError("history is longer than max_generations")
        trajectory = [h["best_full_fitness"] for h in self.history]
        if any(b > a for a, b in zip(trajectory, trajectory[1:])):
            raise ValueError("best full fitness increases across generations")
        members = [Individual.from_dict(m, space) for m in self.archive]
        if len({m.bits for m in members}) != len(members):
            raise ValueError("archive holds duplicate genotypes")
        fits = [m.full_fitness for m in members]
        if any(f is None for f in fits) or fits != sorted(fits):
            raise ValueError("archive is not sorted by full fitness")
        if len(members) > ga.archive_capacity:
            raise ValueError("archive exceeds its capacity")
        best = Individual.from_dict(self.best, space)
        if members and best.bits != members[0].bits:
            raise ValueError("best individual is not the archive head")
        tree = SpaceTree.from_snapshot(self.tree)
        if tree.n_h != space.n_h:
            raise ValueError("tree depth does not match the space")


# --------------------------------------------------------------------------
# Driver


class _Run:
    """State of a single HESGA run; see :func:`run_hesga`."""

    def __init__(self, space, config, evaluator, rng):
        self.space = space
        self.config = config
        self.evaluator = evaluator
        self.rng = rng
        self.tree = SpaceTree.for_space(space)
        self.fast_evals = 0
        self.full_evals = 0

    def _request(self, g: Genotype, budget: float, tag: str) -> EvaluationRequest:
        return EvaluationRequest(
            id=tag,
            values=self.space.decode_values(g),
            budget_fraction=budget,
            seed=derive_seed(self.config.seed, "eval", list(g.indices)),
        )

    def _evaluate(self, genotypes: Sequence[Genotype], budget: float, generation: int, phase: str) -> list[float]:
        requests = [
            self._request(g, budget, f"g{generation}-i{k}-{phase}") for k, g in enumerate(genotypes)
        ]
        try:
            results = self.evaluator.evaluate_many(requests)
        except EvaluationError as exc:
            raise type(exc)(f"generation {generation}, {phase} evaluation: {exc.detail}", exc.request_id) from exc
        return [r.fitness for r in results]

    def full(self, individuals: Sequence[Individual], generation: int) -> None:
        fits = self._evaluate([i.genotype for i in individuals], 1.0, generation, "full")
        for ind, f in zip(individuals, fits):
            ind.full_fitness = f
            self.tree.record_evaluation(pathway(self.space, ind.genotype))
        self.full_evals += len(individuals)

    def fast(self, individuals: Sequence[Individual], generation: int) -> list[float] | None:
        cfg = self.config
        fits = self._evaluate([i.genotype for i in individuals], cfg.fast_fraction, generation, "fast")
        self.fast_evals += len(individuals)
        for ind, f in zip(individuals, fits):
            ind.fast_fitness = f
            if cfg.count_fast_evals:
                self.tree.record_evaluation(pathway(self.space, ind.genotype))
        if cfg.candidate_criterion != "slope":
            return None
        early = self._evaluate([i.genotype for i in individuals], cfg.fast_fraction / 2, generation, "early")
        self.fast_evals += len(individuals)
        return [(e - f) / (cfg.fast_fraction / 2) for e, f in zip(early, fits)]

    def candidates(self, offspring: list[Individual], slopes: list[float] | None) -> list[Individual]:
        k = self.config.candidate_count
        if slopes is None:
            return select_candidates(offspring, k)
        order = sorted(range(len(offspring)), key=lambda i: (-slopes[i], offspring[i].fast_fitness, i))
        return [offspring[i] for i in order[:k]]


def _parent_fitness(ind: Individual) -> float:
    # offspring only carry fast fitness; the initial population only full fitness
    return ind.fast_fitness if ind.fast_fitness is not None else ind.full_fitness


def run_hesga(
    space: SearchSpace,
    config: GaConfig,
    evaluator,
    rng: np.random.Generator | None = None,
    evaluator_info: dict | None = None,
) -> RunRecord:
    """Run the generational loop and return its full record.

    ``evaluator`` is an :class:`~tsm_hpo.evaluation.Evaluator` or any bare
    backend with an ``evaluate(request)`` method. All random decisions come
    from ``rng`` (default: seeded from ``config.seed``).
    """
    started = time.time()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if not hasattr(evaluator, "evaluate_many"):
        evaluator = Evaluator(evaluator, workers=1)
    run = _Run(space, config, evaluator, rng)
    mode = config.mutation_mode

    initial = [random_genotype(space, rng) for _ in range(config.population_size)]
    initial = enforce_population_uniqueness(initial, run.tree, space, mode, rng)
    population = [Individual(g, birth_generation=0) for g in initial]
    run.full(population, 0)
    archive = update_archive(EliteArchive(config.archive_capacity), population)
    logger.info("initial population evaluated; best %.6g", archive.best.full_fitness)

    history: list[dict] = []
    for gen in range(1, config.max_generations + 1):
        fast_before, full_before = run.fast_evals, run.full_evals
        weights_a = selection_weights(archive.fitnesses())
        weights_b = selection_weights([_parent_fitness(p) for p in population])
        children = []
        for _ in range(config.population_size):
            a = archive.members[roulette_select(weights_a, rng)]
            b = population[roulette_select(weights_b, rng)]
            children.append(make_offspring(a, b, run.tree, space, config, rng))
        children = enforce_population_uniqueness(children, run.tree, space, mode, rng)
        offspring = [Individual(g, birth_generation=gen) for g in children]

        slopes = run.fast(offspring, gen)
        chosen = run.candidates(offspring, slopes)
        run.full(chosen, gen)
        archive = update_archive(archive, chosen)
        population = offspring

        history.append(
            {
                "generation": gen,
                "best_full_fitness": archive.best.full_fitness,
                "mean_full_fitness": float(np.mean(archive.fitnesses())),
                "fast_evals": run.fast_evals - fast_before,
                "full_evals": run.full_evals - full_before,
                "population": [ind.bits for ind in population],
                "archive": [m.bits for m in archive.members],
            }
        )
        logger.info("generation %d: best %.6g", gen, archive.best.full_fitness)

    return RunRecord(
        config={"space": space.to_list(), "ga": config.to_dict(), "evaluator": evaluator_info},
        seed=config.seed,
        history=history,
        best=archive.best.to_dict(space),
        archive=[m.to_dict(space) for m in archive.members],
        tree=run.tree.snapshot(),
        evaluations={"fast": run.fast_evals, "full": run.full_evals, "initial_full": len(initial)},
        meta={
            "started_at": started,
            "elapsed_seconds": time.time() - started,
            "workers": getattr(evaluator, "workers", None),
        },
    )

