"""
Evaluation Module

Intersection-ratio metric, whole-dataset evaluation of weight
configurations, and report rendering (text table, CSV, JSON, curve plot).
"""

import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from scripts.classifiers import CLASSIFIER_NAMES, ClassifierBank
from scripts.dataset_io import Dataset, SurObservation
from scripts.ensemble_trainer import WeightVector, prepare_problem, tie_break_key
from scripts.errors import DegenerateGeometryError, InvalidInputError
from scripts.geometry import AreaPolygon, PlanarPoint, centroid, contains, intersection_area
from scripts.osm_ingest import DEFAULT_CANDIDATE_RADIUS_M, CandidatePolygon, OsmExtract, RadiusTable

logger = logging.getLogger(__name__)

# Minimum R (percent) for a selection to count as correct
THRESHOLDS = tuple(range(5, 55, 5))
HIGH_THRESHOLD = 75

RATIO_TOLERANCE = 1e-12

# The single-classifier row used as the reference baseline
BASELINE_CLASSIFIER = "dist_centroid"

REPORT_FORMATS = ("text", "csv", "json")

REPORT_COLUMNS = (
    ["configuration", "samples", "mean_r_pct"]
    + [c for t in THRESHOLDS for c in (f"correct_{t}", f"correct_{t}_pct")]
    + ["r_ge_75", "r_eq_100"]
)


def intersection_ratio(target: AreaPolygon, cand: AreaPolygon) -> float:
    """
    R = 2 * A(target & cand) / (A(target) + A(cand))

    Args:
        target: Ground truth polygon
        cand: Candidate polygon in the same frame

    Returns:
        Overlap ratio in [0, 1]
    """
    a_target, a_cand = target.area, cand.area
    if a_target <= 0 or a_cand <= 0:
        raise DegenerateGeometryError("Intersection ratio of a zero-area polygon")
    if target == cand:
        return 1.0
    ratio = 2.0 * intersection_area(target, cand) / (a_target + a_cand)
    return min(max(ratio, 0.0), 1.0)


@dataclass(frozen=True)
class EvalConfiguration:
    label: str
    weights: WeightVector


def baseline_configurations(baseline: str = BASELINE_CLASSIFIER) -> List[EvalConfiguration]:
    """
    One single-classifier configuration per weak classifier

    The designated baseline classifier comes first and is labelled as such.
    """
    if baseline not in CLASSIFIER_NAMES:
        raise InvalidInputError(f"Unknown baseline classifier '{baseline}'")
    names = [baseline] + [n for n in CLASSIFIER_NAMES if n != baseline]
    return [
        EvalConfiguration(f"baseline ({name})" if name == baseline else f"only {name}", WeightVector.one_hot(name))
        for name in names
    ]


@dataclass(frozen=True)
class EvalRow:
    configuration: str
    samples: int
    mean_r_pct: float
    correct: Dict[int, int]
    r_ge_75: int
    r_eq_100: int

    def percent(self, count: int) -> float:
        return 100.0 * count / self.samples if self.samples else 0.0

    def as_record(self) -> Dict[str, Union[str, int, float]]:
        record: Dict[str, Union[str, int, float]] = {
            "configuration": self.configuration,
            "samples": self.samples,
            "mean_r_pct": self.mean_r_pct,
        }
        for t in THRESHOLDS:
            record[f"correct_{t}"] = self.correct[t]
            record[f"correct_{t}_pct"] = self.percent(self.correct[t])
        record["r_ge_75"] = self.r_ge_75
        record["r_eq_100"] = self.r_eq_100
        return record


@dataclass(frozen=True)
class SampleDetail:
    configuration: str
    sample_id: str
    chosen: Optional[str]
    ratio: float


@dataclass
class EvalReport:
    dataset: str
    rows: List[EvalRow] = field(default_factory=list)
    details: List[SampleDetail] = field(default_factory=list)

    def ratios(self, configuration: str) -> np.ndarray:
        return np.array([d.ratio for d in self.details if d.configuration == configuration])


def summarize_ratios(label: str, ratios: Sequence[float]) -> EvalRow:
    """Mean R and correct@t counts for one configuration"""
    r = np.asarray(ratios, dtype=float)
    correct = {t: int(np.sum(r >= t / 100.0 - RATIO_TOLERANCE)) for t in THRESHOLDS}
    return EvalRow(
        configuration=label,
        samples=len(r),
        mean_r_pct=float(100.0 * r.mean()) if len(r) else 0.0,
        correct=correct,
        r_ge_75=int(np.sum(r >= HIGH_THRESHOLD / 100.0 - RATIO_TOLERANCE)),
        r_eq_100=int(np.sum(r >= 1.0 - RATIO_TOLERANCE)),
    )


def evaluate(
    dataset: Dataset,
    world: OsmExtract,
    configurations: Sequence[EvalConfiguration],
    bank: Optional[ClassifierBank] = None,
    radius: float = DEFAULT_CANDIDATE_RADIUS_M,
    radius_table: Optional[RadiusTable] = None,
) -> EvalReport:
    """
    Evaluate weight configurations on a labelled dataset

    Samples without a selection count as R = 0.

    Args:
        dataset: Samples with ground truth
        world: OSM entities the candidates come from
        configurations: Labelled weight vectors
        bank: Classifiers (configured rules by default)
        radius: Candidate search radius
        radius_table: Node buffer radii

    Returns:
        EvalReport with one row per configuration and per-sample details

    Raises:
        TrainingDataError: If a sample has no ground truth
    """
    report = EvalReport(dataset=dataset.name)
    if not configurations:
        return report
    problem = prepare_problem(dataset, world, bank, radius, radius_table)
    for config in configurations:
        choice = problem.select(config.weights)
        ratios = problem.ratios_for(config.weights)
        row = summarize_ratios(config.label, ratios)
        report.rows.append(row)
        for i, sample_id in enumerate(problem.sample_ids):
            chosen = problem.labels[i][choice[i]] if choice[i] >= 0 else None
            report.details.append(SampleDetail(config.label, sample_id, chosen, float(ratios[i])))
        logger.info(f"{config.label}: mean R {row.mean_r_pct:.1f}% on {row.samples} samples")
    return report


def select_nearest_centroid(
    observation: SurObservation,
    candidates: Sequence[CandidatePolygon],
    radius: float = DEFAULT_CANDIDATE_RADIUS_M,
) -> Optional[CandidatePolygon]:
    """
    Candidate whose centroid is nearest the observation

    Distances beyond the candidate radius are all treated as equal, and ties
    fall back to the ensemble's tie-break.
    """
    here = PlanarPoint(0.0, 0.0)
    best, best_key = None, None
    for c in candidates:
        d = min(centroid(c.geometry).distance_to(here), radius)
        key = (d,) + tie_break_key(contains(c.geometry, here), c.geometry.area, c)
        if best_key is None or key < best_key:
            best, best_key = c, key
    return best


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def report_frame(report: EvalReport) -> pd.DataFrame:
    return pd.DataFrame([row.as_record() for row in report.rows], columns=REPORT_COLUMNS)


def _render_text(report: EvalReport) -> str:
    label_width = max([len("Configuration")] + [len(r.configuration) for r in report.rows])
    headers = ["Mean R"] + [f">={t}%" for t in THRESHOLDS] + [f">={HIGH_THRESHOLD}%", "=100%"]
    lines = [
        f"Dataset: {report.dataset}",
        f"{'Configuration':<{label_width}}  " + "  ".join(f"{h:>7}" for h in headers),
    ]
    lines.append("-" * len(lines[-1]))
    for row in report.rows:
        cells = [f"{row.mean_r_pct:.1f}%"] + [str(row.correct[t]) for t in THRESHOLDS]
        cells += [str(row.r_ge_75), str(row.r_eq_100)]
        lines.append(f"{row.configuration:<{label_width}}  " + "  ".join(f"{c:>7}" for c in cells))
    return "\n".join(lines) + "\n"


def render_report(report: EvalReport, fmt: str = "text") -> str:
    """
    Render a report as a text table, CSV or JSON

    CSV carries the configuration rows only; JSON adds the per-sample details.
    """
    if fmt == "text":
        return _render_text(report)
    if fmt == "csv":
        return report_frame(report).to_csv(index=False)
    if fmt == "json":
        document = {
            "dataset": report.dataset,
            "rows": [row.as_record() for row in report.rows],
            "details": [
                {"configuration": d.configuration, "sample_id": d.sample_id, "chosen": d.chosen, "ratio": d.ratio}
                for d in report.details
            ],
        }
        return json.dumps(document, indent=2)
    raise InvalidInputError(f"Unknown report format '{fmt}', expected one of {REPORT_FORMATS}")


def read_report_csv(text: str) -> List[Dict[str, Union[str, int, float]]]:
    """Rows of a CSV report with the same value types as the JSON rows"""
    df = pd.read_csv(io.StringIO(text), float_precision="round_trip")
    records = []
    for raw in df.to_dict("records"):
        record: Dict[str, Union[str, int, float]] = {}
        for column in REPORT_COLUMNS:
            value = raw[column]
            if column == "configuration":
                record[column] = str(value)
            elif column == "mean_r_pct" or column.endswith("_pct"):
                record[column] = float(value)
            else:
                record[column] = int(value)
        records.append(record)
    return records


def plot_correct_curve(report: EvalReport, path: Union[str, Path]) -> Path:
    """
    Plot correct-count against the minimum R threshold per configuration

    Args:
        report: Evaluation report with per-sample details
        path: Output image file

    Returns:
        Path the figure was written to
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    thresholds = np.arange(0, 101, 5)

    fig, ax = plt.subplots(figsize=(8, 5))
    for row in report.rows:
        ratios = report.ratios(row.configuration)
        counts = [int(np.sum(ratios >= t / 100.0 - RATIO_TOLERANCE)) for t in thresholds]
        ax.plot(thresholds, counts, marker="o", markersize=3, label=row.configuration)
    ax.set_xlabel("Minimum intersection ratio R (%)")
    ax.set_ylabel("Correct associations")
    ax.set_title(f"Correct associations by threshold: {report.dataset}")
    ax.set_xlim(0, 100)
    ax.grid(True, alpha=0.3)
    if report.rows:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.info(f"Saved correct-count curve to {path}")
    return path

