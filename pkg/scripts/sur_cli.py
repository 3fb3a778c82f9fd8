"""
Command-line interface for SUR point-to-polygon association

Subcommands:
    candidates  GeoJSON of the candidate polygons around a point
    score       Ranked GeoJSON for one sample
    train       Learn classifier weights with the genetic algorithm
    eval        Report mean R and correct@t counts for weight configurations

Exit codes: 0 success, 1 usage error, 2 data error. Results go to stdout,
diagnostics to stderr.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from scripts.classifiers import ClassifierBank
from scripts.errors import SurAssociationError
from scripts.settings import configure_logging, get_settings

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


def _bounded_float(name: str, low: float, high: float):
    """argparse type for floats within [low, high]"""
    def parse(text: str) -> float:
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got '{text}'")
        if not low <= value <= high:
            raise argparse.ArgumentTypeError(f"{name} must be in [{low:g}, {high:g}], got {text}")
        return value

    parse.__name__ = name
    return parse


latitude = _bounded_float("latitude", -90.0, 90.0)
longitude = _bounded_float("longitude", -180.0, 180.0)


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> CliParser:
    settings = get_settings()
    parser = CliParser(
        prog="sur-associate",
        description="Associate space usage rule observations with OSM polygons",
    )
    parser.add_argument("--rules-dir", type=Path, default=settings.rules_dir, help="Directory with rule JSON files")
    parser.add_argument("--radius-table", type=Path, default=settings.radius_table_path, help="Node radius table")
    parser.add_argument("--log-level", default=settings.log_level, help="Logging level (default: %(default)s)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--osm", type=Path, required=True, help="OSM XML extract")
        p.add_argument("--radius", type=float, default=settings.candidate_radius_m, help="Candidate radius in meters")

    p = sub.add_parser("candidates", help="List candidate polygons around a point")
    common(p)
    p.add_argument("--lat", type=latitude, required=True, help="Latitude in degrees")
    p.add_argument("--lon", type=longitude, required=True, help="Longitude in degrees")

    p = sub.add_parser("score", help="Score the candidates of one sample")
    common(p)
    p.add_argument("--sample", type=Path, required=True, help="Sample record JSON file")
    p.add_argument("--weights", type=Path, help="Weights JSON (default weights if omitted)")

    p = sub.add_parser("train", help="Learn weights on a labelled dataset")
    common(p)
    p.add_argument("--dataset", type=Path, required=True, help="Dataset directory")
    p.add_argument("--config", type=Path, default=settings.ga_config_path, help="GA config JSON")
    p.add_argument("--out", type=Path, default=Path("weights.json"), help="Output weights JSON")
    p.add_argument("--trace", type=Path, help="Fitness trace CSV (default: next to --out)")
    p.add_argument("--workers", type=int, help="Evaluate fitness on this many threads")

    p = sub.add_parser("eval", help="Evaluate weight configurations")
    common(p)
    p.add_argument("--dataset", type=Path, required=True, help="Dataset directory")
    p.add_argument("--weights", type=Path, nargs="*", default=[], help="Weights JSON files")
    p.add_argument("--baselines", action="store_true", help="Add one row per single classifier")
    p.add_argument("--baseline-classifier", default="dist_centroid", help="Classifier labelled as the baseline")
    p.add_argument("--equal-weights", action="store_true", help="Add the equal-weights row")
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.add_argument("--plot", type=Path, help="Write the correct-count curve to this image")
    return parser


def _load_world(path: Path):
    from scripts.osm_ingest import parse_osm_xml

    if not path.exists():
        raise FileNotFoundError(f"OSM file not found: {path}")
    return parse_osm_xml(path)


def _radius_table(args):
    from scripts.osm_ingest import load_radius_table

    return load_radius_table(args.radius_table)


def cmd_candidates(args, bank: ClassifierBank) -> int:
    from scripts.dataset_io import candidates_to_geojson
    from scripts.geometry import GeoPoint
    from scripts.osm_ingest import candidates_within

    world = _load_world(args.osm)
    center = GeoPoint(args.lat, args.lon)
    candidates = candidates_within(world, center, args.radius, _radius_table(args), get_settings().circle_segments)
    print(json.dumps(candidates_to_geojson(center, candidates), indent=2))
    logger.info(f"{len(candidates)} candidate(s) within {args.radius:g} m")
    return EXIT_OK


def cmd_score(args, bank: ClassifierBank) -> int:
    from scripts.dataset_io import export_geojson, load_sample
    from scripts.ensemble_trainer import default_weights, load_weights, score_all
    from scripts.osm_ingest import candidates_within

    world = _load_world(args.osm)
    observation = load_sample(args.sample)
    weights = load_weights(args.weights) if args.weights else default_weights()
    candidates = candidates_within(
        world, observation.location, args.radius, _radius_table(args), get_settings().circle_segments
    )
    ctx = bank.context_for(observation, args.radius)
    ranked = score_all(ctx, candidates, weights, bank)
    chosen = ranked[0] if ranked else None
    print(json.dumps(export_geojson(observation, ranked, chosen), indent=2))
    if chosen is None:
        logger.warning(f"No candidates around sample '{observation.id}'")
    else:
        logger.info(f"Chose {chosen.candidate.provenance.label} (score {chosen.total:.1f})")
    return EXIT_OK


def cmd_train(args, bank: ClassifierBank) -> int:
    from scripts.dataset_io import load_dataset
    from scripts.ensemble_trainer import load_ga_config, save_trace_csv, save_weights, train

    world = _load_world(args.osm)
    dataset = load_dataset(args.dataset)
    config = load_ga_config(args.config)
    result = train(config, dataset, world, bank, args.radius, _radius_table(args), args.workers)
    save_weights(result, args.out)
    trace_path = args.trace or args.out.with_name(f"{args.out.stem}_trace.csv")
    save_trace_csv(result.history, trace_path)
    print(f"Trained weights (fitness {result.fitness:.4f}) saved to {args.out}")
    print(f"Fitness trace saved to {trace_path}")
    return EXIT_OK


def cmd_eval(args, bank: ClassifierBank) -> int:
    from scripts.dataset_io import load_dataset
    from scripts.ensemble_trainer import default_weights, equal_weights, load_weights
    from scripts.evaluation import (
        EvalConfiguration,
        baseline_configurations,
        evaluate,
        plot_correct_curve,
        render_report,
    )

    world = _load_world(args.osm)
    dataset = load_dataset(args.dataset)
    configurations: List[EvalConfiguration] = []
    if args.baselines:
        configurations += baseline_configurations(args.baseline_classifier)
    if args.equal_weights:
        configurations.append(EvalConfiguration("equal weights", equal_weights()))
    for path in args.weights:
        configurations.append(EvalConfiguration(path.stem, load_weights(path)))
    if not args.weights:
        configurations.append(EvalConfiguration("default weights", default_weights()))

    report = evaluate(dataset, world, configurations, bank, args.radius, _radius_table(args))
    sys.stdout.write(render_report(report, args.format))
    if args.plot:
        plot_correct_curve(report, args.plot)
    return EXIT_OK


COMMANDS = {
    "candidates": cmd_candidates,
    "score": cmd_score,
    "train": cmd_train,
    "eval": cmd_eval,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the subcommand, map failures to exit codes"""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    try:
        bank = ClassifierBank.from_directory(args.rules_dir)
        return COMMANDS[args.command](args, bank)
    except (SurAssociationError, OSError) as e:
        logger.error(str(e))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
