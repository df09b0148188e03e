import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsm_hpo.errors import MissingFullFitness, UniquenessUnreachable
from tsm_hpo.evaluation import Evaluator, FunctionBackend, derive_seed, make_benchmark_objective
from tsm_hpo.evolve import (
    EliteArchive,
    GaConfig,
    Individual,
    RunRecord,
    enforce_population_uniqueness,
    make_offspring,
    run_hesga,
    single_point_crossover,
    single_point_mutation,
    update_archive,
)
from tsm_hpo.space import HyperparameterDef, SearchSpace, reference_space, random_genotype
from tsm_hpo.tree import SpaceTree, pathway


@pytest.fixture
def seven_bit():
    return SearchSpace([HyperparameterDef("x", 0, 127, 1)])


def ind(g, full=None, fast=None):
    return Individual(g, fast_fitness=fast, full_fitness=full)


class TestGaConfig:
    def test_defaults(self):
        cfg = GaConfig()
        assert (cfg.max_generations, cfg.crossover_prob, cfg.mutation_prob, cfg.archive_ratio) == (10, 0.8, 0.2, 0.5)
        assert cfg.population_size == 20 and cfg.candidate_count == 4 and cfg.archive_capacity == 10

    def test_small_population(self):
        cfg = GaConfig(population_size=1)
        assert cfg.archive_capacity == 1 and cfg.candidate_count == 1

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(population_size=0),
            dict(crossover_prob=1.5),
            dict(mutation_mode="gaussian"),
            dict(candidate_count=30),
            dict(fast_fraction=0),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            GaConfig(**kwargs)

    def test_roundtrip(self):
        cfg = GaConfig(population_size=12, seed=3, mutation_mode="single_point")
        assert GaConfig.from_dict(cfg.to_dict()) == cfg


class TestCrossover:
    def test_seven_bit_crossover_figure(self, seven_bit, rng):
        a, b = seven_bit.from_bits("0000000"), seven_bit.from_bits("1111111")
        c1, c2 = single_point_crossover(seven_bit, a, b, rng, cut=4)
        assert (c1.bits, c2.bits) == ("0000111", "1111000")

    def test_identical_parents(self, space, rng):
        g = random_genotype(space, rng)
        for _ in range(20):
            assert single_point_crossover(space, g, g, rng) == (g, g)

    def test_positional_inheritance(self, seven_bit, rng):
        for _ in range(500):
            a, b = random_genotype(seven_bit, rng), random_genotype(seven_bit, rng)
            c1, c2 = single_point_crossover(seven_bit, a, b, rng)
            for i in range(7):
                assert c1.bits[i] in (a.bits[i], b.bits[i])
                assert {c1.bits[i], c2.bits[i]} == {a.bits[i], b.bits[i]}

    def test_cut_range(self, seven_bit, rng):
        a, b = seven_bit.from_bits("0000000"), seven_bit.from_bits("1111111")
        cuts = {single_point_crossover(seven_bit, a, b, rng)[0].bits.count("0") for _ in range(2000)}
        assert cuts == set(range(1, 7))

    def test_repair(self, rng):
        space = SearchSpace([HyperparameterDef("b", 8, 512, 8, bit_width=7)])
        a, b = space.from_bits("1000000"), space.from_bits("0111111")
        c1, _ = single_point_crossover(space, a, b, rng, cut=1)
        assert c1.indices == (63,)  # "1111111" clamps to the last grid point


class TestMutation:
    def test_one_bit(self, rng):
        space = SearchSpace([HyperparameterDef("x", 0, 1, 1)])
        assert single_point_mutation(space, space.from_bits("0"), rng).bits == "1"

    def test_hamming_distance_one(self, seven_bit, rng):
        for _ in range(500):
            g = random_genotype(seven_bit, rng)
            m = single_point_mutation(seven_bit, g, rng)
            assert sum(x != y for x, y in zip(g.bits, m.bits)) == 1

    def test_position_frequency(self, seven_bit):
        rng = np.random.default_rng(11)
        g = seven_bit.from_bits("0000000")
        flips = np.zeros(7)
        for _ in range(100_000):
            flips += np.array([c == "1" for c in single_point_mutation(seven_bit, g, rng).bits])
        np.testing.assert_allclose(flips / 100_000, 1 / 7, atol=0.01)


class TestMakeOffspring:
    def test_no_operators(self, space, rng):
        a, b = ind(random_genotype(space, rng)), ind(random_genotype(space, rng))
        cfg = GaConfig(crossover_prob=0, mutation_prob=0)
        for _ in range(20):
            assert make_offspring(a, b, SpaceTree(4), space, cfg, rng) == a.genotype

    def test_identical_parents(self, space, rng):
        g = random_genotype(space, rng)
        cfg = GaConfig(crossover_prob=1, mutation_prob=0)
        assert make_offspring(ind(g), ind(g), SpaceTree(4), space, cfg, rng) == g

    def test_tsm_changes_at_most_one_fragment(self, space, rng):
        cfg = GaConfig(crossover_prob=1, mutation_prob=1, mutation_mode="tsm")
        tree = SpaceTree(4)
        for seed in range(300):
            a, b = ind(random_genotype(space, rng)), ind(random_genotype(space, rng))
            # replay the crossover part of the stream on a twin generator
            twin = np.random.default_rng(seed)
            twin.random()
            crossed, _ = single_point_crossover(space, a.genotype, b.genotype, twin)
            child = make_offspring(a, b, tree, space, cfg, np.random.default_rng(seed))
            assert sum(x != y for x, y in zip(crossed.indices, child.indices)) <= 1
        assert tree.total_mutations == 300


class TestUniqueness:
    def test_distinct_unchanged(self, space, rng):
        pop = [space.genotype([i, 0, 0, 0]) for i in range(10)]
        assert enforce_population_uniqueness(pop, SpaceTree(4), space, "tsm", rng) == pop

    @pytest.mark.parametrize("mode", ["tsm", "single_point"])
    def test_pair_repaired(self, space, rng, mode):
        g = random_genotype(space, rng)
        out = enforce_population_uniqueness([g, g], SpaceTree(4), space, mode, rng)
        assert out[0] == g and out[1] != g

    @pytest.mark.parametrize("mode", ["tsm", "single_point"])
    def test_tiny_space(self, rng, mode):
        space = SearchSpace([HyperparameterDef("x", 0, 1, 1)])
        g = space.genotype([0])
        assert sorted(enforce_population_uniqueness([g, g], SpaceTree(1), space, mode, rng), key=str) == [
            space.genotype([0]), space.genotype([1])
        ]
        with pytest.raises(UniquenessUnreachable):
            enforce_population_uniqueness([g, g, g], SpaceTree(1), space, mode, rng)

    @pytest.mark.parametrize("mode", ["tsm", "single_point"])
    def test_full_saturation(self, rng, mode):
        space = SearchSpace([HyperparameterDef("x", 0, 3, 1), HyperparameterDef("y", 0, 1, 1)])
        g = space.genotype([0, 0])
        out = enforce_population_uniqueness([g] * 8, SpaceTree(2), space, mode, rng)
        assert len({o.bits for o in out}) == 8

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 5), min_size=1, max_size=40), st.sampled_from(["tsm", "single_point"]))
    def test_output_pairwise_distinct(self, picks, mode):
        space = reference_space()
        rng = np.random.default_rng(len(picks))
        pool = [random_genotype(space, rng) for _ in range(6)]
        out = enforce_population_uniqueness([pool[i] for i in picks], SpaceTree(4), space, mode, rng)
        assert len(out) == len(picks) and len({g.bits for g in out}) == len(out)


class TestArchive:
    def test_sort_and_truncate(self, space, rng):
        cands = [ind(space.genotype([i, 0, 0, 0]), full=f) for i, f in enumerate((0.5, 0.9, 0.7))]
        arch = update_archive(EliteArchive(2), cands)
        assert arch.fitnesses() == [0.5, 0.7]

    def test_duplicate_keeps_best(self, space):
        g = space.genotype([1, 2, 3, 4])
        arch = update_archive(EliteArchive(3), [ind(g, full=0.4)])
        arch2 = update_archive(arch, [ind(g, full=0.6)])
        assert arch2.fitnesses() == [0.4] and len(arch2) == 1
        arch3 = update_archive(arch, [ind(g, full=0.1)])
        assert arch3.fitnesses() == [0.1]

    def test_worse_than_full_archive(self, space):
        arch = update_archive(EliteArchive(2), [ind(space.genotype([i, 0, 0, 0]), full=i) for i in range(2)])
        arch2 = update_archive(arch, [ind(space.genotype([9, 0, 0, 0]), full=5.0)])
        assert [m.bits for m in arch2.members] == [m.bits for m in arch.members]

    def test_missing_full(self, space):
        with pytest.raises(MissingFullFitness):
            update_archive(EliteArchive(2), [ind(space.genotype([0, 0, 0, 0]), fast=0.3)])

    def test_worst_never_gets_worse(self, space, rng):
        arch = EliteArchive(5)
        for _ in range(50):
            cands = [ind(random_genotype(space, rng), full=float(rng.random())) for _ in range(3)]
            new = update_archive(arch, cands)
            if len(arch) == arch.capacity:
                assert new.fitnesses()[-1] <= arch.fitnesses()[-1]
            assert new.fitnesses() == sorted(new.fitnesses())
            assert len({m.bits for m in new.members}) == len(new)
            arch = new


class CountingBackend:
    def __init__(self, objective):
        self.objective = objective
        self.log = []

    def evaluate(self, request):
        self.log.append(request)
        return self.objective.evaluate(request)


class TestRunHesga:
    @pytest.fixture
    def objective(self, space):
        return make_benchmark_objective(space, "deceptive_multimodal", seed=3)

    def test_history_length(self, space, objective):
        rec = run_hesga(space, GaConfig(seed=1), objective)
        assert len(rec.history) == 10
        best = [h["best_full_fitness"] for h in rec.history]
        assert best == sorted(best, reverse=True)

    @pytest.mark.parametrize("mode", ["tsm", "single_point"])
    def test_accounting(self, space, objective, mode):
        backend = CountingBackend(objective)
        cfg = GaConfig(seed=5, mutation_mode=mode)
        rec = run_hesga(space, cfg, Evaluator(backend, workers=1, cache=False))
        full = [r for r in backend.log if r.budget_fraction == 1.0]
        fast = [r for r in backend.log if r.budget_fraction == cfg.fast_fraction]
        assert len(full) == 20 + 10 * 4 and len(fast) == 10 * 20
        assert rec.evaluations == {"fast": 200, "full": 60, "initial_full": 20}
        assert sum(rec.tree["leaf_counts"]) == 60

    def test_tsm_counter_mass(self, space, objective):
        cfg = GaConfig(seed=9, mutation_prob=1.0)
        rec = run_hesga(space, cfg, objective)
        # every offspring is mutated exactly once by the tree-guided operator
        assert sum(i["count"] for i in rec.tree["internal_counts"]) == 10 * 20

    def test_count_fast_evals(self, space, objective):
        rec = run_hesga(space, GaConfig(seed=9, count_fast_evals=True), objective)
        assert sum(rec.tree["leaf_counts"]) == 60 + 200

    def test_slope_criterion(self, space, objective):
        rec = run_hesga(space, GaConfig(seed=9, candidate_criterion="slope"), objective)
        assert rec.evaluations["fast"] == 400 and rec.evaluations["full"] == 60

    def test_determinism(self, space, objective):
        a = run_hesga(space, GaConfig(seed=77), Evaluator(objective, workers=1))
        b = run_hesga(space, GaConfig(seed=77), Evaluator(objective, workers=4))
        assert a.payload_json() == b.payload_json()

    def test_populations_and_archives_unique(self, space, objective):
        for mode in ("tsm", "single_point"):
            rec = run_hesga(space, GaConfig(seed=13, mutation_mode=mode, crossover_prob=1.0), objective)
            for h in rec.history:
                assert len(set(h["population"])) == len(h["population"]) == 20
                assert len(set(h["archive"])) == len(h["archive"])

    def test_archive_fitness_replayable(self, space):
        objective = make_benchmark_objective(space, "plateau_noise", seed=3, noise_sd=0.05)
        rec = run_hesga(space, GaConfig(seed=21), objective)
        for m in rec.archive:
            seed = derive_seed(21, "eval", m["indices"])
            assert m["full_fitness"] == objective.fitness(m["indices"], 1.0, seed)

    def test_record_roundtrip(self, space, objective):
        rec = run_hesga(space, GaConfig(seed=2), objective)
        import json

        again = RunRecord.from_dict(json.loads(rec.to_json()))
        assert again.payload_json() == rec.payload_json()

    def test_record_validation_catches_tampering(self, space, objective):
        import json

        data = json.loads(run_hesga(space, GaConfig(seed=2), objective).to_json())
        data["history"][3]["best_full_fitness"] = 99.0
        with pytest.raises(ValueError):
            RunRecord.from_dict(data)

    def test_evaluator_errors_carry_context(self, space):
        from tsm_hpo.errors import EvaluationFailed

        def boom(values, budget, seed):
            if budget < 1:
                raise RuntimeError("trainer crashed")
            return 1.0

        with pytest.raises(EvaluationFailed, match="generation 1, fast"):
            run_hesga(space, GaConfig(seed=0), FunctionBackend(boom))
