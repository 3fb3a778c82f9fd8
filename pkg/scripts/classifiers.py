"""
Weak Classifiers Module

Eight scoring functions that rate a candidate polygon for one observation.
Each returns a weak score in [-100, 100] where 0 is neutral:

- dist_centroid, dist_edge, dist_vertex: closeness of the observation
- point_in_polygon: whether the candidate contains the observation
- sur_description, sur_osm_mapping: tag rules per SUR type
- orientation: whether the camera was looking at the candidate
- computer_vision: indoor/outdoor guess from the photo plus tag rules

Rule tables and constants are loaded from config/rules/.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from scripts.dataset_io import SUR_TYPE_PATTERN, SurObservation
from scripts.errors import InvalidInputError, InvariantViolationError
from scripts.geometry import (
    GeoPoint,
    PlanarPoint,
    centroid,
    contains,
    min_dist_to_edges,
    min_dist_to_vertices,
)
from scripts.osm_ingest import DEFAULT_CANDIDATE_RADIUS_M, CandidatePolygon, TagPattern
from scripts.settings import get_settings

logger = logging.getLogger(__name__)

CLASSIFIER_NAMES = (
    "dist_centroid",
    "dist_edge",
    "dist_vertex",
    "point_in_polygon",
    "sur_description",
    "sur_osm_mapping",
    "orientation",
    "computer_vision",
)

SCORE_MIN = -100.0
SCORE_MAX = 100.0

# Weak scores are plain floats kept inside [SCORE_MIN, SCORE_MAX] by clamp_score
WeakScore = float


class IndoorOutdoor(str, Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"
    UNKNOWN = "unknown"


class ClassifierConstants(BaseModel):
    """Rewards, penalties and thresholds shared by the classifiers"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    point_in_polygon_hit: float = Field(default=100.0, ge=SCORE_MIN, le=SCORE_MAX)
    point_in_polygon_miss: float = Field(default=-75.0, ge=SCORE_MIN, le=SCORE_MAX)
    description_match: float = Field(default=100.0, ge=SCORE_MIN, le=SCORE_MAX)
    description_mismatch: float = Field(default=-50.0, ge=SCORE_MIN, le=SCORE_MAX)
    mapping_match: float = Field(default=100.0, ge=SCORE_MIN, le=SCORE_MAX)
    mapping_mismatch: float = Field(default=-75.0, ge=SCORE_MIN, le=SCORE_MAX)
    vision_match: float = Field(default=75.0, ge=SCORE_MIN, le=SCORE_MAX)
    vision_mismatch: float = Field(default=-50.0, ge=SCORE_MIN, le=SCORE_MAX)
    orientation_in_view: float = Field(default=75.0, ge=SCORE_MIN, le=SCORE_MAX)
    orientation_behind: float = Field(default=-50.0, ge=SCORE_MIN, le=SCORE_MAX)
    view_half_angle_deg: float = Field(default=30.0, gt=0, lt=90)
    view_range_m: float = Field(default=500.0, gt=0)
    outdoor_evidence_min: float = Field(default=0.5, ge=0)
    indoor_evidence_max: float = Field(default=0.2, ge=0)


DEFAULT_CONSTANTS = ClassifierConstants()


@dataclass(frozen=True)
class RuleSet:
    """
    Tag rules per SUR type

    description_rules map a SUR type to any of several tags (one-to-many),
    mapping_rules to exactly one tag (one-to-one).
    """
    description_rules: Mapping[str, Tuple[TagPattern, ...]] = field(default_factory=dict)
    mapping_rules: Mapping[str, TagPattern] = field(default_factory=dict)

    def __post_init__(self):
        description = {k: tuple(v) for k, v in self.description_rules.items()}
        object.__setattr__(self, "description_rules", description)
        object.__setattr__(self, "mapping_rules", dict(self.mapping_rules))
        for sur_type, patterns in description.items():
            _check_sur_type(sur_type)
            if not patterns:
                raise InvariantViolationError(f"Description rule for '{sur_type}' has no patterns")
        for sur_type in self.mapping_rules:
            _check_sur_type(sur_type)


@dataclass(frozen=True)
class VisionRuleSet:
    """(SUR type, space) -> tag pattern expected for that kind of space"""
    entries: Mapping[Tuple[str, IndoorOutdoor], TagPattern] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "entries", dict(self.entries))
        for sur_type, space in self.entries:
            _check_sur_type(sur_type)
            if space is IndoorOutdoor.UNKNOWN:
                raise InvariantViolationError(f"Vision rule for '{sur_type}' needs inside or outside")


def _check_sur_type(sur_type: str) -> None:
    if not SUR_TYPE_PATTERN.match(sur_type):
        raise InvariantViolationError(f"SUR type '{sur_type}' is not lowercase snake_case")


@dataclass(frozen=True)
class ScoreContext:
    """Per-observation inputs shared by every classifier call"""
    observation: SurObservation
    origin: GeoPoint
    candidate_radius: float = DEFAULT_CANDIDATE_RADIUS_M
    indoor_outdoor: IndoorOutdoor = IndoorOutdoor.UNKNOWN
    position: PlanarPoint = PlanarPoint(0.0, 0.0)

    def __post_init__(self):
        if self.origin != self.observation.location:
            raise InvariantViolationError("Score context origin must be the observation location")
        if not self.candidate_radius > 0:
            raise InvalidInputError(f"Candidate radius must be positive, got {self.candidate_radius}")

    @classmethod
    def for_observation(
        cls,
        observation: SurObservation,
        candidate_radius: float = DEFAULT_CANDIDATE_RADIUS_M,
        indoor_outdoor: Optional[IndoorOutdoor] = None,
        constants: ClassifierConstants = DEFAULT_CONSTANTS,
    ) -> "ScoreContext":
        """Context with indoor/outdoor taken from the observation's image unless given"""
        if indoor_outdoor is None:
            indoor_outdoor = classify_indoor_outdoor(observation.image_path, constants)
        return cls(observation, observation.location, candidate_radius, indoor_outdoor)


def clamp_score(value: float) -> WeakScore:
    return float(min(max(value, SCORE_MIN), SCORE_MAX))


def distance_score(distance: float, radius: float) -> WeakScore:
    """Linear +100 at distance 0 down to -100 at the candidate radius, clamped"""
    return clamp_score(SCORE_MAX - 2.0 * SCORE_MAX * distance / radius)


# ---------------------------------------------------------------------------
# Geometric classifiers
# ---------------------------------------------------------------------------

def score_dist_centroid(ctx: ScoreContext, candidate: CandidatePolygon) -> WeakScore:
    d = centroid(candidate.geometry).distance_to(ctx.position)
    return distance_score(d, ctx.candidate_radius)


def score_dist_edge(ctx: ScoreContext, candidate: CandidatePolygon) -> WeakScore:
    d = min_dist_to_edges(candidate.geometry, ctx.position)
    return distance_score(d, ctx.candidate_radius)


def score_dist_vertex(ctx: ScoreContext, candidate: CandidatePolygon) -> WeakScore:
    d = min_dist_to_vertices(candidate.geometry, ctx.position)
    return distance_score(d, ctx.candidate_radius)


def score_point_in_polygon(
    ctx: ScoreContext,
    candidate: CandidatePolygon,
    constants: ClassifierConstants = DEFAULT_CONSTANTS,
) -> WeakScore:
    if contains(candidate.geometry, ctx.position):
        return clamp_score(constants.point_in_polygon_hit)
    return clamp_score(constants.point_in_polygon_miss)


def score_orientation(
    ctx: ScoreContext,
    candidate: CandidatePolygon,
    constants: ClassifierConstants = DEFAULT_CONSTANTS,
) -> WeakScore:
    """
    Line-of-sight score from the camera heading

    Returns orientation_in_view if a vertex or the centroid lies inside the
    view cone within view_range_m, orientation_behind if every vertex is
    behind the camera, 0 otherwise or without a heading.
    """
    heading = ctx.observation.heading
    if heading is None:
        return 0.0
    theta = math.radians(heading)
    view = np.array([math.sin(theta), math.cos(theta)])
    here = np.array([ctx.position.x, ctx.position.y])

    vertices = candidate.geometry.vertex_array - here
    c = centroid(candidate.geometry)
    points = np.vstack([vertices, [c.x - here[0], c.y - here[1]]])

    dist = np.hypot(points[:, 0], points[:, 1])
    along = points @ view
    cos_limit = math.cos(math.radians(constants.view_half_angle_deg))
    with np.errstate(invalid="ignore", divide="ignore"):
        in_cone = (dist <= 1e-9) | (along >= cos_limit * dist)
    if np.any(in_cone & (dist <= constants.view_range_m)):
        return clamp_score(constants.orientation_in_view)
    if np.all(vertices @ view < 0):
        return clamp_score(constants.orientation_behind)
    return 0.0


# ---------------------------------------------------------------------------
# Tag-rule classifiers
# ---------------------------------------------------------------------------

def _mean_rule_score(
    sur_types: Sequence[str],
    rule_for: Callable[[str], Optional[Sequence[TagPattern]]],
    tags: Mapping[str, str],
    match: float,
    mismatch: float,
) -> WeakScore:
    contributions = []
    for sur_type in sur_types:
        patterns = rule_for(sur_type)
        if patterns is None:
            contributions.append(0.0)
        elif any(p.matches(tags) for p in patterns):
            contributions.append(match)
        else:
            contributions.append(mismatch)
    if not contributions:
        return 0.0
    return clamp_score(sum(contributions) / len(contributions))


def score_sur_description(
    ctx: ScoreContext,
    candidate: CandidatePolygon,
    rules: RuleSet,
    constants: ClassifierConstants = DEFAULT_CONSTANTS,
) -> WeakScore:
    return _mean_rule_score(
        ctx.observation.sur_types,
        rules.description_rules.get,
        candidate.tags,
        constants.description_match,
        constants.description_mismatch,
    )


def score_sur_osm_mapping(
    ctx: ScoreContext,
    candidate: CandidatePolygon,
    rules: RuleSet,
    constants: ClassifierConstants = DEFAULT_CONSTANTS,
) -> WeakScore:
    def rule_for(sur_type):
        pattern = rules.mapping_rules.get(sur_type)
        return None if pattern is None else (pattern,)

    return _mean_rule_score(
        ctx.observation.sur_types,
        rule_for,
        candidate.tags,
        constants.mapping_match,
        constants.mapping_mismatch,
    )


def score_computer_vision(
    ctx: ScoreContext,
    candidate: CandidatePolygon,
    vision_rules: VisionRuleSet,
    constants: ClassifierConstants = DEFAULT_CONSTANTS,
) -> WeakScore:
    space = ctx.indoor_outdoor
    if space is None or space is IndoorOutdoor.UNKNOWN:
        return 0.0

    def rule_for(sur_type):
        pattern = vision_rules.entries.get((sur_type, space))
        return None if pattern is None else (pattern,)

    return _mean_rule_score(
        ctx.observation.sur_types,
        rule_for,
        candidate.tags,
        constants.vision_match,
        constants.vision_mismatch,
    )


# ---------------------------------------------------------------------------
# Indoor / outdoor heuristic
# ---------------------------------------------------------------------------

GRID_SIZE = 4


def _is_sky(r: float, g: float, b: float) -> bool:
    brightness = (r + g + b) / 3.0
    blue_dominant = b > r + 0.05 and b >= g and brightness >= 0.45
    near_white = brightness >= 0.85 and max(r, g, b) - min(r, g, b) < 0.1
    return blue_dominant or near_white


def _is_vegetation(r: float, g: float, b: float) -> bool:
    return g > r + 0.05 and g > b + 0.05 and (r + g + b) / 3.0 > 0.15


def outdoor_evidence(image: Image.Image) -> float:
    """Sky-like fraction of the top grid row plus vegetation fraction of all cells"""
    width, height = image.size
    if width < GRID_SIZE or height < GRID_SIZE:
        image = image.resize((max(width, GRID_SIZE), max(height, GRID_SIZE)), Image.NEAREST)
    pixels = np.asarray(image.convert("RGB"), dtype=float) / 255.0
    row_blocks = np.array_split(np.arange(pixels.shape[0]), GRID_SIZE)
    col_blocks = np.array_split(np.arange(pixels.shape[1]), GRID_SIZE)

    sky_cells = 0
    vegetation_cells = 0
    for i, rows in enumerate(row_blocks):
        for cols in col_blocks:
            r, g, b = pixels[np.ix_(rows, cols)].reshape(-1, 3).mean(axis=0)
            if i == 0 and _is_sky(r, g, b):
                sky_cells += 1
            if _is_vegetation(r, g, b):
                vegetation_cells += 1
    return sky_cells / GRID_SIZE + vegetation_cells / GRID_SIZE ** 2


def classify_indoor_outdoor(
    image: Union[None, str, Path, Image.Image],
    constants: ClassifierConstants = DEFAULT_CONSTANTS,
) -> IndoorOutdoor:
    """
    Guess whether a photo was taken inside or outside

    Args:
        image: Image path, an already opened PIL image, or None
        constants: Evidence thresholds

    Returns:
        OUTSIDE above outdoor_evidence_min, INSIDE below indoor_evidence_max,
        UNKNOWN in between, without an image, or if it cannot be decoded
    """
    if image is None:
        return IndoorOutdoor.UNKNOWN
    if not isinstance(image, Image.Image):
        try:
            with Image.open(image) as opened:
                opened.load()
                image = opened.convert("RGB")
        except (OSError, UnidentifiedImageError, ValueError) as e:
            logger.warning(f"Cannot decode image {image}: {e}")
            return IndoorOutdoor.UNKNOWN

    evidence = outdoor_evidence(image)
    if evidence > constants.outdoor_evidence_min:
        return IndoorOutdoor.OUTSIDE
    if evidence < constants.indoor_evidence_max:
        return IndoorOutdoor.INSIDE
    return IndoorOutdoor.UNKNOWN


# ---------------------------------------------------------------------------
# Rule files
# ---------------------------------------------------------------------------

def _read_json(path: Path):
    if not path.exists():
        raise InvalidInputError(f"Rule file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InvalidInputError(f"Invalid JSON in {path}: {e}") from e


def _parse_pattern(text, where: str) -> TagPattern:
    if not isinstance(text, str):
        raise InvalidInputError(f"{where}: tag pattern must be a string, got {text!r}")
    try:
        return TagPattern.parse(text)
    except InvalidInputError as e:
        raise InvalidInputError(f"{where}: {e}") from e


def load_rule_set(rules_dir: Union[str, Path]) -> RuleSet:
    """
    Load description.json ({sur_type: [pattern, ...]}) and mapping.json
    ({sur_type: pattern}) from rules_dir
    """
    rules_dir = Path(rules_dir)
    description_path = rules_dir / "description.json"
    mapping_path = rules_dir / "mapping.json"
    description_raw = _read_json(description_path)
    mapping_raw = _read_json(mapping_path)
    if not isinstance(description_raw, dict) or not isinstance(mapping_raw, dict):
        raise InvalidInputError(f"Rule files in {rules_dir} must contain JSON objects")

    description = {}
    for sur_type, patterns in description_raw.items():
        if not isinstance(patterns, list) or not patterns:
            raise InvalidInputError(f"{description_path}: '{sur_type}' needs a non-empty pattern list")
        description[sur_type] = tuple(_parse_pattern(p, f"{description_path}: {sur_type}") for p in patterns)
    mapping = {
        sur_type: _parse_pattern(pattern, f"{mapping_path}: {sur_type}")
        for sur_type, pattern in mapping_raw.items()
    }
    try:
        rules = RuleSet(description, mapping)
    except InvariantViolationError as e:
        raise InvalidInputError(f"{rules_dir}: {e}") from e
    logger.debug(f"Loaded {len(description)} description and {len(mapping)} mapping rules from {rules_dir}")
    return rules


def load_vision_rules(rules_dir: Union[str, Path]) -> VisionRuleSet:
    """Load vision.json: [{"sur_type": ..., "space": "inside"|"outside", "pattern": ...}, ...]"""
    path = Path(rules_dir) / "vision.json"
    raw = _read_json(path)
    if not isinstance(raw, list):
        raise InvalidInputError(f"{path} must contain a JSON list")
    entries: Dict[Tuple[str, IndoorOutdoor], TagPattern] = {}
    for index, item in enumerate(raw):
        where = f"{path}: entry {index}"
        try:
            key = (item["sur_type"], IndoorOutdoor(item["space"]))
            pattern = _parse_pattern(item["pattern"], where)
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidInputError(f"{where}: {e}") from e
        if key in entries:
            raise InvalidInputError(f"{where}: duplicate rule for {key[0]}/{key[1].value}")
        entries[key] = pattern
    try:
        return VisionRuleSet(entries)
    except InvariantViolationError as e:
        raise InvalidInputError(f"{path}: {e}") from e


def load_constants(rules_dir: Union[str, Path]) -> ClassifierConstants:
    path = Path(rules_dir) / "constants.json"
    if not path.exists():
        return DEFAULT_CONSTANTS
    try:
        return ClassifierConstants.model_validate(_read_json(path))
    except ValidationError as e:
        raise InvalidInputError(f"{path}: {e}") from e


@dataclass(frozen=True)
class ClassifierBank:
    """All eight classifiers bound to one set of rules and constants"""
    rules: RuleSet
    vision_rules: VisionRuleSet
    constants: ClassifierConstants = DEFAULT_CONSTANTS

    @classmethod
    def from_directory(cls, rules_dir: Optional[Union[str, Path]] = None) -> "ClassifierBank":
        rules_dir = Path(rules_dir or get_settings().rules_dir)
        return cls(load_rule_set(rules_dir), load_vision_rules(rules_dir), load_constants(rules_dir))

    def context_for(
        self,
        observation: SurObservation,
        candidate_radius: float = DEFAULT_CANDIDATE_RADIUS_M,
    ) -> ScoreContext:
        return ScoreContext.for_observation(observation, candidate_radius, constants=self.constants)

    def score(self, ctx: ScoreContext, candidate: CandidatePolygon) -> np.ndarray:
        """Weak scores of one candidate in CLASSIFIER_NAMES order"""
        k = self.constants
        return np.array([
            score_dist_centroid(ctx, candidate),
            score_dist_edge(ctx, candidate),
            score_dist_vertex(ctx, candidate),
            score_point_in_polygon(ctx, candidate, k),
            score_sur_description(ctx, candidate, self.rules, k),
            score_sur_osm_mapping(ctx, candidate, self.rules, k),
            score_orientation(ctx, candidate, k),
            score_computer_vision(ctx, candidate, self.vision_rules, k),
        ])

    def score_many(self, ctx: ScoreContext, candidates: Sequence[CandidatePolygon]) -> np.ndarray:
        """(n, 8) score matrix; (0, 8) for no candidates"""
        if not candidates:
            return np.zeros((0, len(CLASSIFIER_NAMES)))
        return np.vstack([self.score(ctx, c) for c in candidates])


@lru_cache(maxsize=8)
def _bank_for(rules_dir: str) -> ClassifierBank:
    return ClassifierBank.from_directory(rules_dir)


def default_bank() -> ClassifierBank:
    """Bank for the configured rules directory, loaded once per directory"""
    return _bank_for(str(get_settings().rules_dir))
