"""
Tests for weighted selection, the training problem and the genetic algorithm
"""

import json

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from scripts.classifiers import CLASSIFIER_NAMES
from scripts.dataset_io import Dataset
from scripts.ensemble_trainer import (
    W_MAX,
    GaConfig,
    TrainingProblem,
    WeightVector,
    _repair,
    default_weights,
    equal_weights,
    fitness,
    load_ga_config,
    load_weights,
    prepare_problem,
    save_trace_csv,
    save_weights,
    score_all,
    select_per_sur,
    select_polygon,
    train,
    train_problem,
)
from scripts.errors import InvalidInputError, InvariantViolationError, TrainingDataError
from scripts.generate_synthetic_benchmark import build_oracle_problem, single_classifier_fitness
from scripts.osm_ingest import candidates_within
from tests.conftest import CONFIG_DIR
from tests.helpers import make_candidate, make_observation, rect, square

SMALL_GA = GaConfig(population_size=8, generations=3, elitism_count=1, rng_seed=5)


def _one_hot_array(name):
    return WeightVector.one_hot(name).as_array()


class TestWeightVector:
    """Tests for WeightVector invariants and constructors"""

    @pytest.mark.parametrize(
        "values",
        [
            (1.0,) * 7,
            (-0.1,) + (1.0,) * 7,
            (10.5,) + (1.0,) * 7,
            (float("nan"),) + (1.0,) * 7,
            (0.0,) * 8,
        ],
    )
    def test_invalid(self, values):
        """Wrong length, out-of-range, non-finite and all-zero vectors are rejected"""
        with pytest.raises(InvariantViolationError):
            WeightVector(values)

    def test_bounds_are_inclusive(self):
        """0 and W_MAX are both allowed"""
        w = WeightVector((0.0,) * 7 + (W_MAX,))
        assert w["computer_vision"] == W_MAX

    def test_from_dict(self):
        """Dicts must name every classifier exactly once"""
        w = WeightVector.from_dict({name: 2.0 for name in CLASSIFIER_NAMES})
        assert w == equal_weights().scaled(2.0)
        with pytest.raises(InvalidInputError):
            WeightVector.from_dict({"dist_centroid": 1.0})
        with pytest.raises(InvalidInputError):
            WeightVector.from_dict({**{name: 1.0 for name in CLASSIFIER_NAMES}, "bogus": 1.0})

    def test_default_weights(self):
        """Reference weights in classifier order"""
        assert default_weights().values == (0.5, 2.8, 0.5, 1.0, 4.3, 3.5, 1.0, 1.0)
        assert default_weights().as_dict()["sur_description"] == 4.3

    def test_one_hot(self):
        """one_hot keeps a single classifier"""
        w = WeightVector.one_hot("orientation", 3.0)
        assert w.as_dict() == {name: (3.0 if name == "orientation" else 0.0) for name in CLASSIFIER_NAMES}
        with pytest.raises(InvalidInputError):
            WeightVector.one_hot("telepathy")


class TestSelection:
    """Tests for score_all, select_polygon and select_per_sur"""

    def test_ranks_by_total(self, bank):
        """The matching, containing candidate wins"""
        ctx = bank.context_for(make_observation(("no_dogs",)))
        park = make_candidate(square(-50, -50, 100), {"leisure": "park"}, 1)
        cafe = make_candidate(square(20, 20, 10), {"amenity": "cafe"}, 2)
        ranked = score_all(ctx, [cafe, park], default_weights(), bank)
        assert [r.candidate for r in ranked] == [park, cafe]
        assert ranked[0].contains_observation
        assert ranked[0].total == pytest.approx(float(np.dot(ranked[0].weak_scores, default_weights().values)))
        assert ranked[0].score_of("sur_description") == 100.0

    def test_tie_prefers_containing_then_smaller(self, bank):
        """Equal totals fall back to containment, then area, then provenance"""
        ctx = bank.context_for(make_observation(("no_unicorns",)))
        weights = WeightVector.one_hot("sur_description")
        outside_small = make_candidate(square(30, 30, 5), osm_id=1)
        inside_big = make_candidate(square(-50, -50, 100), osm_id=2)
        inside_small = make_candidate(square(-5, -5, 10), osm_id=3)
        ranked = score_all(ctx, [outside_small, inside_big, inside_small], weights, bank)
        assert [r.candidate.provenance.osm_id for r in ranked] == [3, 2, 1]

        twin_a = make_candidate(rect(10, 10, 20, 20), osm_id=9)
        twin_b = make_candidate(rect(30, 10, 40, 20), osm_id=4)
        assert select_polygon(ctx, [twin_a, twin_b], weights, bank).candidate is twin_b

    def test_scaling_weights_keeps_selection(self, bank):
        """Multiplying every weight by a constant does not change the choice"""
        rng = np.random.default_rng(12)
        ctx = bank.context_for(make_observation(("no_dogs", "no_smoking"), heading=200.0))
        candidates = [
            make_candidate(square(*rng.uniform(-300, 300, 2), 40), {"leisure": "park"}, i) for i in range(20)
        ]
        base = WeightVector.from_array(rng.uniform(0.5, 4.0, 8))
        chosen = select_polygon(ctx, candidates, base, bank).candidate
        assert select_polygon(ctx, candidates, base.scaled(2.5), bank).candidate is chosen

    def test_scaling_invariance_on_random_fixtures(self, bank):
        """Positive rescaling keeps the choice across random candidate sets"""
        rng = np.random.default_rng(31)
        tag_choices = [{"leisure": "park"}, {"natural": "water"}, {"amenity": "restaurant"}, {"building": "yes"}]
        sur_choices = ["no_dogs", "no_smoking", "no_swimming", "no_cycling"]
        for _ in range(1000):
            heading = float(rng.uniform(0, 360)) if rng.random() < 0.5 else None
            surs = tuple(str(s) for s in rng.choice(sur_choices, size=int(rng.integers(1, 3)), replace=False))
            ctx = bank.context_for(make_observation(surs, heading=heading))
            candidates = []
            for i in range(int(rng.integers(2, 7))):
                x, y = rng.uniform(-400, 300, 2)
                w, h = rng.uniform(5, 120, 2)
                tags = tag_choices[int(rng.integers(len(tag_choices)))]
                candidates.append(make_candidate(rect(x, y, x + w, y + h), tags, i + 1))
            base = WeightVector.from_array(rng.uniform(0.0, 2.0, 8))
            chosen = select_polygon(ctx, candidates, base, bank).candidate
            factor = float(rng.uniform(0.05, 5.0))
            assert select_polygon(ctx, candidates, base.scaled(factor), bank).candidate is chosen

    def test_empty_candidate_set(self, bank):
        """No candidates, no selection"""
        ctx = bank.context_for(make_observation())
        assert select_polygon(ctx, [], default_weights(), bank) is None
        assert score_all(ctx, [], default_weights(), bank) == []

    def test_select_per_sur(self, bank):
        """Each SUR type gets its own best candidate"""
        ctx = bank.context_for(make_observation(("no_dogs", "no_smoking")))
        park = make_candidate(square(-20, -20, 40), {"leisure": "park"}, 1)
        restaurant = make_candidate(square(-20, -20, 40), {"amenity": "restaurant"}, 2)
        selections = select_per_sur(ctx, [park, restaurant], default_weights(), bank)
        assert selections["no_dogs"].candidate is park
        assert selections["no_smoking"].candidate is restaurant


class TestTrainingProblem:
    """Tests for the precomputed problem"""

    def test_select_and_fitness(self):
        """Selection is argmax of the weighted totals; fitness is mean R"""
        scores = np.zeros((2, 3, 8))
        scores[0, :, 0] = [10, 50, 20]
        scores[1, :, 1] = [90, 10, 0]
        ratios = np.array([[0.0, 1.0, 0.5], [0.2, 0.9, 0.0]])
        problem = TrainingProblem.from_arrays(scores, ratios)

        assert problem.select(_one_hot_array("dist_centroid")).tolist() == [1, 0]
        assert problem.ratios_for(_one_hot_array("dist_centroid")).tolist() == [1.0, 0.2]
        assert problem.fitness(_one_hot_array("dist_edge")) == pytest.approx((0.0 + 0.2) / 2)

    def test_mask_and_empty_rows(self):
        """Padded slots are never chosen; rows without candidates select -1 and score 0"""
        scores = np.zeros((2, 2, 8))
        scores[0, 1, 0] = 100
        mask = np.array([[True, False], [False, False]])
        ratios = np.array([[0.4, 1.0], [1.0, 1.0]])
        problem = TrainingProblem.from_arrays(scores, ratios, mask=mask)
        assert problem.select(equal_weights()).tolist() == [0, -1]
        assert problem.fitness(equal_weights()) == pytest.approx(0.2)

    def test_tie_rank_breaks_ties(self):
        """Equal totals pick the lowest tie rank"""
        scores = np.zeros((1, 3, 8))
        tie_rank = np.array([[2, 0, 1]])
        problem = TrainingProblem.from_arrays(scores, np.zeros((1, 3)), tie_rank=tie_rank)
        assert problem.select(equal_weights()).tolist() == [1]

    def test_rejects_bad_shapes(self):
        """Empty problems and mismatched arrays are rejected"""
        with pytest.raises(TrainingDataError):
            TrainingProblem.from_arrays(np.zeros((0, 2, 8)), np.zeros((0, 2)))
        with pytest.raises(InvalidInputError):
            TrainingProblem.from_arrays(np.zeros((1, 2, 7)), np.zeros((1, 2)))
        with pytest.raises(InvalidInputError):
            TrainingProblem.from_arrays(np.zeros((1, 2, 8)), np.zeros((1, 3)))


class TestDemoData:
    """Tests on the hand-built demo world and dataset"""

    def test_default_weights_find_every_target(self, demo_dataset, demo_world, bank, radius_table):
        """Reference weights pick the ground-truth polygon for every demo sample"""
        problem = prepare_problem(demo_dataset, demo_world, bank, 500, radius_table)
        assert problem.sample_ids == tuple(s.id for s in demo_dataset)
        assert problem.ratios_for(default_weights()).tolist() == [1.0] * 5
        assert fitness(default_weights(), demo_dataset, demo_world, bank, 500, radius_table) == 1.0

    def test_chosen_labels(self, demo_dataset, demo_world, bank, radius_table):
        """Labels identify the chosen candidates"""
        problem = prepare_problem(demo_dataset, demo_world, bank, 500, radius_table)
        choice = problem.select(default_weights())
        chosen = [problem.labels[i][c] for i, c in enumerate(choice)]
        assert chosen == ["way/100", "way/200", "way/300", "way/500", "way/200"]

    def test_park_totals(self, demo_dataset, demo_world, bank, radius_table):
        """The park sample's totals match the hand computation"""
        sample = demo_dataset.samples[0]
        candidates = candidates_within(demo_world, sample.location, 500, radius_table)
        ranked = score_all(bank.context_for(sample), candidates, default_weights(), bank)
        assert ranked[0].candidate.provenance.label == "way/100"
        assert ranked[0].total == pytest.approx(881.7, abs=0.5)

    def test_missing_ground_truth(self, demo_world, bank, radius_table):
        """Every training sample needs ground truth"""
        dataset = Dataset("unlabelled", (make_observation(sample_id="u"),))
        with pytest.raises(TrainingDataError, match="'u'"):
            prepare_problem(dataset, demo_world, bank, 500, radius_table)
        with pytest.raises(TrainingDataError):
            prepare_problem(Dataset("empty", ()), demo_world, bank, 500, radius_table)

    def test_train_on_demo(self, demo_dataset, demo_world, bank, radius_table):
        """A short run returns valid weights and a full history"""
        result = train(SMALL_GA, demo_dataset, demo_world, bank, 500, radius_table)
        assert 0.0 <= result.fitness <= 1.0
        assert len(result.history) == SMALL_GA.generations + 1
        assert result.fitness == max(result.best_trace)


class TestGeneticAlgorithm:
    """Tests for train_problem"""

    def test_learns_the_oracle(self):
        """On the oracle benchmark trained weights reach 95%, beat equal weights and favour the oracle"""
        problem = build_oracle_problem()
        result = train_problem(GaConfig(generations=50), problem)
        assert result.fitness >= 0.95
        assert result.fitness > problem.fitness(equal_weights())
        assert result.fitness == pytest.approx(problem.fitness(result.weights))
        learned = result.weights.as_dict()
        oracle_weight = learned.pop("sur_description")
        assert oracle_weight > max(learned.values())

    def test_oracle_benchmark_shape(self):
        """The oracle column alone is perfect"""
        problem = build_oracle_problem(n_samples=20, n_candidates=5, oracle="dist_edge", seed=1)
        assert problem.scores.shape == (20, 5, 8)
        assert problem.sample_ids[0] == "synthetic_000"
        assert single_classifier_fitness(problem)["dist_edge"] == 1.0
        with pytest.raises(InvalidInputError):
            build_oracle_problem(oracle="telepathy")

    def test_deterministic(self):
        """Same seed, same result; thread pool evaluation changes nothing"""
        problem = build_oracle_problem(n_samples=20, seed=3)
        config = GaConfig(population_size=16, generations=10, rng_seed=99)
        first = train_problem(config, problem)
        second = train_problem(config, problem)
        threaded = train_problem(config, problem, max_workers=4)
        assert first.weights == second.weights == threaded.weights
        assert first.history == second.history == threaded.history

    def test_seed_changes_population(self):
        """Different seeds explore different individuals"""
        problem = build_oracle_problem(n_samples=20, seed=3)
        a = train_problem(GaConfig(population_size=8, generations=0, rng_seed=1), problem)
        b = train_problem(GaConfig(population_size=8, generations=0, rng_seed=2), problem)
        assert a.weights != b.weights

    def test_history_and_elitism(self):
        """History has one row per generation plus the initial one; elitism keeps best non-decreasing"""
        problem = build_oracle_problem(n_samples=20, seed=4)
        result = train_problem(GaConfig(population_size=12, generations=15, elitism_count=2), problem)
        assert [h.generation for h in result.history] == list(range(16))
        trace = result.best_trace
        assert all(b >= a for a, b in zip(trace, trace[1:]))
        assert all(h.mean <= h.best for h in result.history)

    def test_zero_generations(self):
        """generations=0 evaluates the initial population only"""
        problem = build_oracle_problem(n_samples=10, seed=4)
        result = train_problem(GaConfig(population_size=4, generations=0, elitism_count=0), problem)
        assert len(result.history) == 1

    def test_weights_stay_valid_under_heavy_mutation(self):
        """Clipping and repair keep every individual inside the weight box"""
        problem = build_oracle_problem(n_samples=10, seed=6)
        config = GaConfig(population_size=10, generations=20, mutation_rate=1.0, mutation_sigma=20.0)
        result = train_problem(config, problem)
        assert all(0.0 <= v <= W_MAX for v in result.weights.values)
        assert any(v > 0 for v in result.weights.values)

    def test_repair(self):
        """An all-zero individual gets one positive gene"""
        genes = _repair(np.zeros(8), np.random.default_rng(0))
        assert np.count_nonzero(genes) == 1
        assert 0.0 < genes.max() <= W_MAX

    def test_config_validation(self):
        """Elitism must leave room for children"""
        with pytest.raises(ValidationError):
            GaConfig(population_size=4, elitism_count=4)
        with pytest.raises(ValidationError):
            GaConfig(crossover_rate=1.5)


class TestPersistence:
    """Tests for config, weights and trace files"""

    def test_shipped_ga_config(self):
        """The shipped config equals the built-in defaults"""
        assert load_ga_config(CONFIG_DIR / "ga_default.json") == GaConfig()

    def test_bad_ga_config(self, temp_data_dir):
        """Missing, unparsable and invalid configs raise InvalidInputError"""
        path = temp_data_dir / "ga.json"
        with pytest.raises(InvalidInputError):
            load_ga_config(path)
        path.write_text("{")
        with pytest.raises(InvalidInputError):
            load_ga_config(path)
        path.write_text(json.dumps({"population_size": 1}))
        with pytest.raises(InvalidInputError):
            load_ga_config(path)
        path.write_text(json.dumps({"mutation_sgima": 0.3}))
        with pytest.raises(InvalidInputError):
            load_ga_config(path)

    def test_save_and_load_weights(self, temp_data_dir):
        """Saved weights load back and record their seed"""
        result = train_problem(SMALL_GA, build_oracle_problem(n_samples=5, seed=2))
        path = save_weights(result, temp_data_dir / "out" / "weights.json")
        document = json.loads(path.read_text())
        assert document["rng_seed"] == SMALL_GA.rng_seed
        assert document["config"]["population_size"] == SMALL_GA.population_size
        assert load_weights(path) == result.weights

    def test_bare_weights_file(self, temp_data_dir):
        """A plain {classifier: weight} object is accepted"""
        path = temp_data_dir / "w.json"
        path.write_text(json.dumps(default_weights().as_dict()))
        assert load_weights(path) == default_weights()

    def test_bad_weights_files(self, temp_data_dir):
        """Invalid weight files raise InvalidInputError"""
        path = temp_data_dir / "w.json"
        with pytest.raises(InvalidInputError):
            load_weights(path)
        path.write_text("[1, 2]")
        with pytest.raises(InvalidInputError):
            load_weights(path)
        path.write_text(json.dumps({name: -1.0 for name in CLASSIFIER_NAMES}))
        with pytest.raises(InvalidInputError):
            load_weights(path)
        path.write_text(json.dumps({"weights": {"dist_edge": 1.0}}))
        with pytest.raises(InvalidInputError):
            load_weights(path)

    def test_trace_csv(self, temp_data_dir):
        """The trace has one row per generation"""
        result = train_problem(SMALL_GA, build_oracle_problem(n_samples=5, seed=2))
        path = save_trace_csv(result.history, temp_data_dir / "trace.csv")
        df = pd.read_csv(path)
        assert list(df.columns) == ["generation", "best", "mean"]
        assert len(df) == SMALL_GA.generations + 1
        assert df["best"].tolist() == pytest.approx(result.best_trace)
