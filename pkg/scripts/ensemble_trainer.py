"""
Ensemble Trainer Module

Combines the weak classifier scores into one total per candidate, picks the
best candidate, and learns the weight vector with a genetic algorithm
against labelled samples.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from scripts.classifiers import CLASSIFIER_NAMES, ClassifierBank, ScoreContext, default_bank
from scripts.dataset_io import Dataset
from scripts.errors import InvalidInputError, InvariantViolationError, TrainingDataError
from scripts.geometry import DEFAULT_CIRCLE_SEGMENTS, contains
from scripts.osm_ingest import (
    DEFAULT_CANDIDATE_RADIUS_M,
    CandidatePolygon,
    OsmExtract,
    RadiusTable,
    candidates_within,
)
from scripts.settings import get_settings

logger = logging.getLogger(__name__)

W_MAX = 10.0
N_CLASSIFIERS = len(CLASSIFIER_NAMES)

# Totals are compared after normalising by the weight sum, at this precision
TIE_DECIMALS = 9


@dataclass(frozen=True)
class WeightVector:
    """One weight in [0, W_MAX] per classifier, in CLASSIFIER_NAMES order"""
    values: Tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        if len(values) != N_CLASSIFIERS:
            raise InvariantViolationError(f"Expected {N_CLASSIFIERS} weights, got {len(values)}")
        for name, v in zip(CLASSIFIER_NAMES, values):
            if not math.isfinite(v) or not 0.0 <= v <= W_MAX:
                raise InvariantViolationError(f"Weight {name}={v} outside [0, {W_MAX:g}]")
        if not any(v > 0 for v in values):
            raise InvariantViolationError("At least one weight must be positive")

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "WeightVector":
        return cls(tuple(np.asarray(values, dtype=float).tolist()))

    @classmethod
    def from_dict(cls, weights: Mapping[str, float]) -> "WeightVector":
        unknown = set(weights) - set(CLASSIFIER_NAMES)
        missing = set(CLASSIFIER_NAMES) - set(weights)
        if unknown or missing:
            raise InvalidInputError(
                f"Weights must name exactly the classifiers {list(CLASSIFIER_NAMES)} "
                f"(unknown: {sorted(unknown)}, missing: {sorted(missing)})"
            )
        return cls(tuple(weights[name] for name in CLASSIFIER_NAMES))

    @classmethod
    def one_hot(cls, name: str, value: float = 1.0) -> "WeightVector":
        """Only the named classifier counts"""
        if name not in CLASSIFIER_NAMES:
            raise InvalidInputError(f"Unknown classifier '{name}'")
        return cls(tuple(value if n == name else 0.0 for n in CLASSIFIER_NAMES))

    def __getitem__(self, name: str) -> float:
        return self.values[CLASSIFIER_NAMES.index(name)]

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(CLASSIFIER_NAMES, self.values))

    def scaled(self, factor: float) -> "WeightVector":
        return WeightVector(tuple(v * factor for v in self.values))


def default_weights() -> WeightVector:
    """
    Reference weights

    point_in_polygon and orientation have no reported value and default to 1.0.
    """
    return WeightVector.from_dict({
        "dist_centroid": 0.5,
        "dist_edge": 2.8,
        "dist_vertex": 0.5,
        "point_in_polygon": 1.0,
        "sur_description": 4.3,
        "sur_osm_mapping": 3.5,
        "orientation": 1.0,
        "computer_vision": 1.0,
    })


def equal_weights() -> WeightVector:
    return WeightVector(tuple(1.0 for _ in CLASSIFIER_NAMES))


@dataclass(frozen=True, eq=False)
class ScoredCandidate:
    """Candidate with its weak scores and weighted total"""
    candidate: CandidatePolygon
    weak_scores: Tuple[float, ...]
    total: float
    contains_observation: bool

    @property
    def area(self) -> float:
        return self.candidate.geometry.area

    def score_of(self, name: str) -> float:
        return self.weak_scores[CLASSIFIER_NAMES.index(name)]


def tie_break_key(contains_observation: bool, area: float, candidate: CandidatePolygon) -> tuple:
    """Containing candidates first, then smaller area, then ascending provenance"""
    return (0 if contains_observation else 1, area, candidate.provenance.sort_key)


def _ranking_key(scored: ScoredCandidate, weight_sum: float) -> tuple:
    normalised = round(scored.total / weight_sum, TIE_DECIMALS)
    return (-normalised,) + tie_break_key(scored.contains_observation, scored.area, scored.candidate)


def score_all(
    ctx: ScoreContext,
    candidates: Sequence[CandidatePolygon],
    weights: WeightVector,
    bank: Optional[ClassifierBank] = None,
) -> List[ScoredCandidate]:
    """
    Score every candidate with all classifiers

    Args:
        ctx: Observation context
        candidates: Candidate set (typically from candidates_within)
        weights: Classifier weights
        bank: Classifiers to use (configured rules by default)

    Returns:
        Scored candidates, best first
    """
    bank = bank or default_bank()
    scores = bank.score_many(ctx, candidates)
    totals = scores @ weights.as_array()
    scored = [
        ScoredCandidate(
            candidate=c,
            weak_scores=tuple(float(s) for s in row),
            total=float(total),
            contains_observation=contains(c.geometry, ctx.position),
        )
        for c, row, total in zip(candidates, scores, totals)
    ]
    weight_sum = sum(weights.values)
    scored.sort(key=lambda s: _ranking_key(s, weight_sum))
    return scored


def select_polygon(
    ctx: ScoreContext,
    candidates: Sequence[CandidatePolygon],
    weights: WeightVector,
    bank: Optional[ClassifierBank] = None,
) -> Optional[ScoredCandidate]:
    """Highest-total candidate, or None for an empty candidate set"""
    ranked = score_all(ctx, candidates, weights, bank)
    return ranked[0] if ranked else None


def select_per_sur(
    ctx: ScoreContext,
    candidates: Sequence[CandidatePolygon],
    weights: WeightVector,
    bank: Optional[ClassifierBank] = None,
) -> Dict[str, Optional[ScoredCandidate]]:
    """One selection per SUR type of the observation, each scored on that SUR alone"""
    selections = {}
    for sur_type in ctx.observation.sur_types:
        single = replace(ctx, observation=replace(ctx.observation, sur_types=(sur_type,)))
        selections[sur_type] = select_polygon(single, candidates, weights, bank)
    return selections


# ---------------------------------------------------------------------------
# Precomputed training problem
# ---------------------------------------------------------------------------

def _weight_array(weights: Union[WeightVector, np.ndarray]) -> np.ndarray:
    if isinstance(weights, WeightVector):
        return weights.as_array()
    return np.asarray(weights, dtype=float)


@dataclass(frozen=True, eq=False)
class TrainingProblem:
    """
    Weak scores and overlap ratios of every (sample, candidate) pair

    Totals are linear in the weights, so selecting under a weight vector is a
    matrix product plus the tie-break. Rows are padded to the largest
    candidate count; mask marks real candidates.
    """
    sample_ids: Tuple[str, ...]
    scores: np.ndarray      # (samples, candidates, classifiers)
    mask: np.ndarray        # (samples, candidates) bool
    tie_rank: np.ndarray    # (samples, candidates) int, 0 wins a tie
    ratios: np.ndarray      # (samples, candidates) R against ground truth
    labels: Tuple[Tuple[str, ...], ...] = ()

    def __post_init__(self):
        s, c, k = self.scores.shape
        if k != N_CLASSIFIERS:
            raise InvalidInputError(f"Score tensor needs {N_CLASSIFIERS} classifier columns, got {k}")
        for name in ("mask", "tie_rank", "ratios"):
            if getattr(self, name).shape != (s, c):
                raise InvalidInputError(f"{name} must have shape {(s, c)}")
        if s == 0:
            raise TrainingDataError("Training set is empty")

    @classmethod
    def from_arrays(
        cls,
        scores: np.ndarray,
        ratios: np.ndarray,
        mask: Optional[np.ndarray] = None,
        tie_rank: Optional[np.ndarray] = None,
        sample_ids: Optional[Sequence[str]] = None,
    ) -> "TrainingProblem":
        scores = np.asarray(scores, dtype=float)
        s, c = scores.shape[:2]
        mask = np.ones((s, c), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        if tie_rank is None:
            tie_rank = np.tile(np.arange(c), (s, 1))
        ids = tuple(sample_ids) if sample_ids is not None else tuple(str(i) for i in range(s))
        return cls(ids, scores, mask, np.asarray(tie_rank, dtype=np.int64), np.asarray(ratios, dtype=float))

    @property
    def n_samples(self) -> int:
        return self.scores.shape[0]

    def select(self, weights: Union[WeightVector, np.ndarray]) -> np.ndarray:
        """Chosen candidate index per sample; -1 where a sample has no candidates"""
        w = _weight_array(weights)
        totals = self.scores @ w
        key = np.round(totals / w.sum(), TIE_DECIMALS)
        key = np.where(self.mask, key, -np.inf)
        tied = (key == key.max(axis=1, keepdims=True)) & self.mask
        rank = np.where(tied, self.tie_rank, np.iinfo(np.int64).max)
        choice = rank.argmin(axis=1)
        choice[~self.mask.any(axis=1)] = -1
        return choice

    def ratios_for(self, weights: Union[WeightVector, np.ndarray]) -> np.ndarray:
        """R of each sample's selection, 0 where nothing was selected"""
        choice = self.select(weights)
        picked = self.ratios[np.arange(self.n_samples), np.maximum(choice, 0)]
        return np.where(choice >= 0, picked, 0.0)

    def fitness(self, weights: Union[WeightVector, np.ndarray]) -> float:
        return float(self.ratios_for(weights).mean())


def prepare_problem(
    dataset: Dataset,
    world: OsmExtract,
    bank: Optional[ClassifierBank] = None,
    radius: float = DEFAULT_CANDIDATE_RADIUS_M,
    radius_table: Optional[RadiusTable] = None,
    segments: int = DEFAULT_CIRCLE_SEGMENTS,
) -> TrainingProblem:
    """
    Score every candidate of every labelled sample once

    Raises:
        TrainingDataError: If the dataset is empty or a sample has no ground truth
    """
    # evaluation imports this module
    from scripts.evaluation import intersection_ratio

    if len(dataset) == 0:
        raise TrainingDataError(f"Dataset '{dataset.name}' has no samples")
    bank = bank or default_bank()

    rows = []
    for sample in dataset:
        if not sample.has_ground_truth:
            raise TrainingDataError("has no ground truth", sample.id)
        ctx = bank.context_for(sample, radius)
        candidates = candidates_within(world, sample.location, radius, radius_table, segments)
        target = sample.ground_truth_polygon()
        scores = bank.score_many(ctx, candidates)
        ratios = [intersection_ratio(target, c.geometry) for c in candidates]
        keys = [tie_break_key(contains(c.geometry, ctx.position), c.geometry.area, c) for c in candidates]
        ranks = np.empty(len(candidates), dtype=np.int64)
        ranks[sorted(range(len(candidates)), key=keys.__getitem__)] = np.arange(len(candidates))
        rows.append((sample.id, scores, ratios, ranks, tuple(c.provenance.label for c in candidates)))

    width = max(1, max(len(r[2]) for r in rows))
    s = len(rows)
    scores = np.zeros((s, width, N_CLASSIFIERS))
    mask = np.zeros((s, width), dtype=bool)
    tie_rank = np.full((s, width), width, dtype=np.int64)
    ratios = np.zeros((s, width))
    for i, (_, sample_scores, sample_ratios, ranks, _) in enumerate(rows):
        n = len(sample_ratios)
        scores[i, :n] = sample_scores
        mask[i, :n] = True
        tie_rank[i, :n] = ranks
        ratios[i, :n] = sample_ratios

    logger.info(f"Prepared {s} samples with up to {width} candidates each")
    return TrainingProblem(
        sample_ids=tuple(r[0] for r in rows),
        scores=scores,
        mask=mask,
        tie_rank=tie_rank,
        ratios=ratios,
        labels=tuple(r[4] for r in rows),
    )


def fitness(
    weights: WeightVector,
    training: Dataset,
    world: OsmExtract,
    bank: Optional[ClassifierBank] = None,
    radius: float = DEFAULT_CANDIDATE_RADIUS_M,
    radius_table: Optional[RadiusTable] = None,
) -> float:
    """Mean R of the selections over the training samples, in [0, 1]"""
    return prepare_problem(training, world, bank, radius, radius_table).fitness(weights)


# ---------------------------------------------------------------------------
# Genetic algorithm
# ---------------------------------------------------------------------------

class GaConfig(BaseModel):
    """Genetic algorithm parameters"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    population_size: int = Field(default=64, ge=2)
    generations: int = Field(default=100, ge=0)
    tournament_size: int = Field(default=4, ge=1)
    crossover_rate: float = Field(default=0.9, ge=0, le=1)
    mutation_rate: float = Field(default=0.1, ge=0, le=1)
    mutation_sigma: float = Field(default=0.5, ge=0)
    elitism_count: int = Field(default=2, ge=0)
    rng_seed: int = Field(default=42, ge=0, lt=2 ** 64)

    @model_validator(mode="after")
    def check_elitism(self):
        if self.elitism_count >= self.population_size:
            raise ValueError("elitism_count must be smaller than population_size")
        return self


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    best: float
    mean: float


@dataclass(frozen=True)
class TrainingResult:
    weights: WeightVector
    fitness: float
    history: Tuple[GenerationStats, ...]
    config: GaConfig

    @property
    def best_trace(self) -> List[float]:
        return [h.best for h in self.history]


def _individual_rng(config: GaConfig, generation: int, index: int) -> np.random.Generator:
    return np.random.default_rng([config.rng_seed, generation, index])


def _repair(genes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Resample one gene until the individual has a positive weight"""
    while not np.any(genes > 0):
        genes[rng.integers(len(genes))] = rng.uniform(0.0, W_MAX)
    return genes


def _random_individual(config: GaConfig, index: int) -> np.ndarray:
    rng = _individual_rng(config, 0, index)
    return _repair(rng.uniform(0.0, W_MAX, N_CLASSIFIERS), rng)


def _tournament(rng: np.random.Generator, scores: np.ndarray, size: int) -> int:
    entrants = rng.choice(len(scores), size=min(size, len(scores)), replace=False)
    return int(entrants[np.argmax(scores[entrants])])


def _breed(
    config: GaConfig,
    generation: int,
    index: int,
    population: np.ndarray,
    scores: np.ndarray,
) -> np.ndarray:
    rng = _individual_rng(config, generation, index)
    a = population[_tournament(rng, scores, config.tournament_size)]
    b = population[_tournament(rng, scores, config.tournament_size)]
    if rng.random() < config.crossover_rate:
        lam = rng.random()
        child = lam * a + (1.0 - lam) * b
    else:
        child = a.copy()
    # draw the full vectors every time so the stream layout never changes
    mutate = rng.random(N_CLASSIFIERS) < config.mutation_rate
    noise = rng.normal(0.0, config.mutation_sigma, N_CLASSIFIERS)
    child = np.clip(child + np.where(mutate, noise, 0.0), 0.0, W_MAX)
    return _repair(child, rng)


def train_problem(
    config: GaConfig,
    problem: TrainingProblem,
    max_workers: Optional[int] = None,
) -> TrainingResult:
    """
    Run the genetic algorithm on a prepared problem

    Individual i of generation g draws all its randomness from the stream
    seeded by (rng_seed, g, i), so results do not depend on evaluation order.

    Args:
        config: GA parameters
        problem: Precomputed scores and ratios
        max_workers: Evaluate fitness on a thread pool of this size

    Returns:
        Best individual seen, its fitness and per-generation statistics
    """
    population = np.vstack([_random_individual(config, i) for i in range(config.population_size)])
    executor = ThreadPoolExecutor(max_workers=max_workers) if max_workers else None

    def evaluate(pop: np.ndarray) -> np.ndarray:
        if executor is None:
            return np.array([problem.fitness(ind) for ind in pop])
        return np.array(list(executor.map(problem.fitness, pop)))

    history: List[GenerationStats] = []
    best_genes, best_fitness = None, -1.0
    try:
        for generation in range(config.generations + 1):
            scores = evaluate(population)
            leader = int(np.argmax(scores))
            if scores[leader] > best_fitness:
                best_genes, best_fitness = population[leader].copy(), float(scores[leader])
            stats = GenerationStats(generation, float(scores.max()), float(scores.mean()))
            history.append(stats)
            level = logging.INFO if generation % 10 == 0 or generation == config.generations else logging.DEBUG
            logger.log(level, f"Generation {generation}: best={stats.best:.4f} mean={stats.mean:.4f}")
            if generation == config.generations:
                break

            order = np.argsort(-scores, kind="stable")
            elites = population[order[: config.elitism_count]]
            children = [
                _breed(config, generation + 1, i, population, scores)
                for i in range(config.elitism_count, config.population_size)
            ]
            population = np.vstack([elites] + children) if children else elites.copy()
    finally:
        if executor is not None:
            executor.shutdown()

    weights = WeightVector.from_array(best_genes)
    logger.info(f"Training finished: fitness={best_fitness:.4f}")
    return TrainingResult(weights, best_fitness, tuple(history), config)


def train(
    config: GaConfig,
    training: Dataset,
    world: OsmExtract,
    bank: Optional[ClassifierBank] = None,
    radius: float = DEFAULT_CANDIDATE_RADIUS_M,
    radius_table: Optional[RadiusTable] = None,
    max_workers: Optional[int] = None,
) -> TrainingResult:
    """
    Learn classifier weights on a labelled dataset

    Raises:
        TrainingDataError: If the dataset is empty or a sample lacks ground truth
    """
    problem = prepare_problem(training, world, bank, radius, radius_table)
    return train_problem(config, problem, max_workers)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def load_ga_config(path: Optional[Union[str, Path]] = None) -> GaConfig:
    """GA parameters from a JSON file (the configured default if path is None)"""
    path = Path(path or get_settings().ga_config_path)
    if not path.exists():
        raise InvalidInputError(f"GA config not found: {path}")
    try:
        return GaConfig.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"Invalid JSON in {path}: {e}") from e
    except ValidationError as e:
        raise InvalidInputError(f"Invalid GA config {path}: {e}") from e


def save_weights(result: TrainingResult, path: Union[str, Path]) -> Path:
    """Write trained weights with the config and seed they came from"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {
        "weights": result.weights.as_dict(),
        "fitness": result.fitness,
        "rng_seed": result.config.rng_seed,
        "config": result.config.model_dump(),
    }
    path.write_text(json.dumps(document, indent=2), encoding="utf-8")
    logger.info(f"Saved weights to {path}")
    return path


def load_weights(path: Union[str, Path]) -> WeightVector:
    """
    Read a weights file

    Accepts files written by save_weights or a bare {classifier: weight} object.
    """
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"Weights file not found: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"Invalid JSON in {path}: {e}") from e
    weights = document.get("weights", document) if isinstance(document, dict) else None
    if not isinstance(weights, dict):
        raise InvalidInputError(f"{path} does not contain a weights object")
    try:
        return WeightVector.from_dict({k: float(v) for k, v in weights.items()})
    except (TypeError, ValueError) as e:
        raise InvalidInputError(f"{path}: {e}") from e


def save_trace_csv(history: Sequence[GenerationStats], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame([{"generation": h.generation, "best": h.best, "mean": h.mean} for h in history],
                      columns=["generation", "best", "mean"])
    df.to_csv(path, index=False)
    return path
