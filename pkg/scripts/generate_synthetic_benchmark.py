"""
Synthetic Oracle Benchmark

Builds a training problem where one classifier column knows the answer
(+100 for the true candidate, -100 for every other) and the remaining
columns are uniform noise in [-100, 100]. The true candidate has R = 1,
all others R = 0.

Run as a script to train on it and compare equal vs. trained weights.
"""

import argparse
from typing import Dict, Optional

import numpy as np

from scripts.classifiers import CLASSIFIER_NAMES, SCORE_MAX, SCORE_MIN
from scripts.ensemble_trainer import (
    TrainingProblem,
    WeightVector,
    equal_weights,
    load_ga_config,
    train_problem,
)
from scripts.errors import InvalidInputError
from scripts.settings import configure_logging

# Benchmark shape
DEFAULT_SAMPLES = 50
DEFAULT_CANDIDATES = 10
DEFAULT_ORACLE = "sur_description"
DEFAULT_SEED = 7


def build_oracle_problem(
    n_samples: int = DEFAULT_SAMPLES,
    n_candidates: int = DEFAULT_CANDIDATES,
    oracle: str = DEFAULT_ORACLE,
    seed: int = DEFAULT_SEED,
) -> TrainingProblem:
    """
    Build the oracle benchmark

    Args:
        n_samples: Number of samples
        n_candidates: Candidates per sample
        oracle: Classifier column that scores the true candidate +100
        seed: Seed for noise, true candidate positions and tie ranks

    Returns:
        TrainingProblem with every candidate present
    """
    if oracle not in CLASSIFIER_NAMES:
        raise InvalidInputError(f"Unknown classifier '{oracle}'")
    if n_samples < 1 or n_candidates < 2:
        raise InvalidInputError("Need at least 1 sample and 2 candidates")

    rng = np.random.default_rng(seed)
    rows = np.arange(n_samples)
    scores = rng.uniform(SCORE_MIN, SCORE_MAX, size=(n_samples, n_candidates, len(CLASSIFIER_NAMES)))
    truth = rng.integers(n_candidates, size=n_samples)

    column = CLASSIFIER_NAMES.index(oracle)
    scores[:, :, column] = SCORE_MIN
    scores[rows, truth, column] = SCORE_MAX

    ratios = np.zeros((n_samples, n_candidates))
    ratios[rows, truth] = 1.0
    tie_rank = rng.permuted(np.tile(np.arange(n_candidates), (n_samples, 1)), axis=1)

    return TrainingProblem.from_arrays(
        scores,
        ratios,
        tie_rank=tie_rank,
        sample_ids=[f"synthetic_{i:03d}" for i in rows],
    )


def single_classifier_fitness(problem: TrainingProblem) -> Dict[str, float]:
    """Fitness of every one-hot weight vector"""
    return {name: problem.fitness(WeightVector.one_hot(name)) for name in CLASSIFIER_NAMES}


def main(argv: Optional[list] = None):
    """
    Train on the oracle benchmark and print the comparison
    """
    parser = argparse.ArgumentParser(description="Train on the synthetic oracle benchmark")
    parser.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    parser.add_argument("--candidates", type=int, default=DEFAULT_CANDIDATES)
    parser.add_argument("--oracle", choices=CLASSIFIER_NAMES, default=DEFAULT_ORACLE)
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED, help="Benchmark seed")
    parser.add_argument("--config", help="GA config JSON (configured default if omitted)")
    parser.add_argument("--log-level", default="WARNING")
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    problem = build_oracle_problem(args.samples, args.candidates, args.oracle, args.seed)
    result = train_problem(load_ga_config(args.config), problem)

    print("=" * 60)
    print("Synthetic oracle benchmark")
    print("=" * 60)
    print(f"Samples: {args.samples}, candidates per sample: {args.candidates}, oracle: {args.oracle}")
    print(f"Equal weights mean R:   {100 * problem.fitness(equal_weights()):.1f}%")
    print(f"Trained weights mean R: {100 * result.fitness:.1f}%")
    print("\nTrained weights:")
    for name, weight in result.weights.as_dict().items():
        marker = "  <- oracle" if name == args.oracle else ""
        print(f"  {name:<18} {weight:6.3f}{marker}")
    print("\nSingle-classifier mean R:")
    for name, value in single_classifier_fitness(problem).items():
        print(f"  {name:<18} {100 * value:5.1f}%")


if __name__ == "__main__":
    main()
