"""
Dataset I/O Module

Loads and saves SUR observation datasets (one JSON manifest per directory)
and exports candidate sets and scoring results as GeoJSON.

Manifest layout:
    {
      "name": "demo",
      "samples": [
        {"id": "s1", "lat": 53.55, "lon": 10.0, "sur_types": ["no_dogs"],
         "heading": 90.0, "image": "images/s1.jpg",
         "ground_truth": {"type": "Polygon", "coordinates": [[[lon, lat], ...]]}}
      ]
    }
"""

import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, Iterator, List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from scripts.errors import DatasetError, InvalidInputError
from scripts.geometry import AreaPolygon, GeoPoint, Ring, polygon_from_geo, unproject

if TYPE_CHECKING:
    from scripts.ensemble_trainer import ScoredCandidate
    from scripts.osm_ingest import CandidatePolygon

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

SUR_TYPE_PATTERN = re.compile(r"^[a-z][a-z0-9]*(_[a-z0-9]+)*$")


# Pydantic models for the manifest
class GeoJsonPolygon(BaseModel):
    """GeoJSON Polygon geometry; positions are [lon, lat(, alt)]"""
    type: Literal["Polygon"]
    coordinates: List[List[List[float]]] = Field(min_length=1)

    @field_validator("coordinates")
    @classmethod
    def check_positions(cls, rings):
        for ring in rings:
            for position in ring:
                if len(position) < 2:
                    raise ValueError("positions need at least [lon, lat]")
        return rings


class SampleRecord(BaseModel):
    """One sample entry of a dataset manifest"""
    model_config = ConfigDict(extra="ignore")

    id: str = Field(min_length=1)
    lat: float = Field(ge=-90, le=90)
    lon: float = Field(ge=-180, le=180)
    sur_types: List[str] = Field(min_length=1)
    heading: Optional[float] = Field(default=None, ge=0, lt=360)
    image: Optional[str] = None
    ground_truth: Optional[GeoJsonPolygon] = None

    @field_validator("sur_types")
    @classmethod
    def check_sur_types(cls, values):
        for value in values:
            if not SUR_TYPE_PATTERN.match(value):
                raise ValueError(f"SUR type '{value}' is not lowercase snake_case")
        return values


@dataclass(frozen=True)
class SurObservation:
    """
    A point observation of one or more space usage rules

    ground_truth holds WGS84 rings, outer ring first; rings may be open or closed.
    """
    id: str
    location: GeoPoint
    sur_types: Tuple[str, ...]
    heading: Optional[float] = None
    image_path: Optional[Path] = None
    ground_truth: Optional[Tuple[Tuple[GeoPoint, ...], ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "sur_types", tuple(self.sur_types))
        if not self.sur_types:
            raise InvalidInputError(f"Observation '{self.id}' has no SUR types")
        for sur_type in self.sur_types:
            if not SUR_TYPE_PATTERN.match(sur_type):
                raise InvalidInputError(f"SUR type '{sur_type}' is not lowercase snake_case")
        if self.heading is not None and not 0.0 <= self.heading < 360.0:
            raise InvalidInputError(f"Heading {self.heading} outside [0, 360)")
        if self.ground_truth is not None:
            rings = tuple(tuple(ring) for ring in self.ground_truth)
            object.__setattr__(self, "ground_truth", rings)
            # builds the rings once so invalid ground truth fails here
            self.ground_truth_polygon()

    @property
    def has_ground_truth(self) -> bool:
        return self.ground_truth is not None

    def ground_truth_polygon(self, origin: Optional[GeoPoint] = None) -> Optional[AreaPolygon]:
        """Ground truth projected into origin's frame (the observation's own by default)"""
        if self.ground_truth is None:
            return None
        return polygon_from_geo(origin or self.location, self.ground_truth)


@dataclass(frozen=True)
class Dataset:
    name: str
    samples: Tuple[SurObservation, ...]
    skipped: Tuple[Tuple[str, str], ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        seen = set()
        for sample in self.samples:
            if sample.id in seen:
                raise DatasetError(f"Duplicate sample id '{sample.id}' in dataset '{self.name}'")
            seen.add(sample.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[SurObservation]:
        return iter(self.samples)


def observation_from_record(record: SampleRecord, base_dir: Optional[Path] = None) -> SurObservation:
    """
    Convert a validated manifest record into an observation

    Args:
        record: Parsed sample record
        base_dir: Directory that relative image paths are resolved against

    Returns:
        SurObservation
    """
    image_path = None
    if record.image:
        image_path = Path(record.image)
        if base_dir is not None and not image_path.is_absolute():
            image_path = base_dir / image_path
    ground_truth = None
    if record.ground_truth is not None:
        ground_truth = tuple(
            tuple(GeoPoint(position[1], position[0]) for position in ring)
            for ring in record.ground_truth.coordinates
        )
    return SurObservation(
        id=record.id,
        location=GeoPoint(record.lat, record.lon),
        sur_types=tuple(record.sur_types),
        heading=record.heading,
        image_path=image_path,
        ground_truth=ground_truth,
    )


def observation_to_record(observation: SurObservation, base_dir: Optional[Path] = None) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        "id": observation.id,
        "lat": observation.location.lat,
        "lon": observation.location.lon,
        "sur_types": list(observation.sur_types),
    }
    if observation.heading is not None:
        record["heading"] = observation.heading
    if observation.image_path is not None:
        image = observation.image_path
        if base_dir is not None and image.is_absolute() == Path(base_dir).is_absolute():
            image = Path(os.path.relpath(image, base_dir))
        record["image"] = image.as_posix()
    if observation.ground_truth is not None:
        record["ground_truth"] = {
            "type": "Polygon",
            "coordinates": [
                _geo_ring_coords(ring, exterior=(i == 0)) for i, ring in enumerate(observation.ground_truth)
            ],
        }
    return record


def _describe(error: Exception) -> str:
    if isinstance(error, ValidationError):
        return "; ".join(
            f"{'.'.join(str(p) for p in e['loc']) or 'record'}: {e['msg']}" for e in error.errors()
        )
    return str(error)


def load_dataset(directory: Union[str, Path]) -> Dataset:
    """
    Load a dataset directory

    Invalid samples are skipped and listed in Dataset.skipped; only a missing
    or unreadable manifest fails the whole load.

    Args:
        directory: Directory containing manifest.json

    Returns:
        Dataset with every valid sample

    Raises:
        DatasetError: If the manifest is missing or corrupt
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise DatasetError(f"No {MANIFEST_NAME} found in {directory}")
    try:
        document = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DatasetError(f"Corrupt manifest {manifest_path}: {e}") from e
    if not isinstance(document, dict) or not isinstance(document.get("samples"), list):
        raise DatasetError(f"Manifest {manifest_path} must be an object with a 'samples' list")

    name = document.get("name") or directory.name
    samples: List[SurObservation] = []
    skipped: List[Tuple[str, str]] = []
    seen = set()
    for index, raw in enumerate(document["samples"]):
        label = str(raw.get("id")) if isinstance(raw, dict) and raw.get("id") else f"#{index}"
        try:
            observation = observation_from_record(SampleRecord.model_validate(raw), directory)
        except (ValidationError, ValueError) as e:
            skipped.append((label, _describe(e)))
            logger.warning(f"Skipping sample {label}: {_describe(e)}")
            continue
        if observation.id in seen:
            skipped.append((label, "duplicate sample id"))
            logger.warning(f"Skipping sample {label}: duplicate sample id")
            continue
        seen.add(observation.id)
        samples.append(observation)

    logger.info(f"Loaded {len(samples)} samples from {manifest_path} ({len(skipped)} skipped)")
    return Dataset(name=name, samples=tuple(samples), skipped=tuple(skipped))


def save_dataset(dataset: Dataset, directory: Union[str, Path]) -> Path:
    """Write dataset as a manifest under directory; returns the manifest path"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    document = {
        "name": dataset.name,
        "samples": [observation_to_record(s, directory) for s in dataset.samples],
    }
    manifest_path = directory / MANIFEST_NAME
    manifest_path.write_text(json.dumps(document, indent=2), encoding="utf-8")
    logger.info(f"Saved {len(dataset)} samples to {manifest_path}")
    return manifest_path


def load_sample(path: Union[str, Path]) -> SurObservation:
    """
    Load a single sample record file

    Raises:
        DatasetError: If the file is missing, corrupt or not a valid record
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Sample file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
        return observation_from_record(SampleRecord.model_validate(raw), path.parent)
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DatasetError(f"Corrupt sample file {path}: {e}") from e
    except (ValidationError, ValueError) as e:
        raise DatasetError(f"Invalid sample in {path}: {_describe(e)}") from e


# ---------------------------------------------------------------------------
# GeoJSON export
# ---------------------------------------------------------------------------

def _geo_ring_coords(points: Sequence[GeoPoint], exterior: bool) -> List[List[float]]:
    """Closed [lon, lat] ring, counter-clockwise if exterior else clockwise"""
    coords = [[p.lon, p.lat] for p in points]
    if coords[0] == coords[-1]:
        coords.pop()
    signed = sum(
        a[0] * b[1] - b[0] * a[1] for a, b in zip(coords, coords[1:] + coords[:1])
    )
    if (signed > 0) != exterior:
        coords.reverse()
    return coords + [coords[0]]


def _planar_ring_coords(origin: GeoPoint, ring: Ring, exterior: bool) -> List[List[float]]:
    return _geo_ring_coords(
        [unproject(origin, v) for v in ring.oriented(counter_clockwise=exterior).vertices],
        exterior,
    )


def polygon_to_geojson(origin: GeoPoint, polygon: AreaPolygon) -> Dict[str, Any]:
    """GeoJSON Polygon geometry of a planar polygon in origin's frame"""
    rings = [_planar_ring_coords(origin, polygon.outer, exterior=True)]
    rings += [_planar_ring_coords(origin, hole, exterior=False) for hole in polygon.holes]
    return {"type": "Polygon", "coordinates": rings}


def _observation_feature(observation: SurObservation) -> Dict[str, Any]:
    return {
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [observation.location.lon, observation.location.lat]},
        "properties": {
            "role": "observation",
            "id": observation.id,
            "sur_types": list(observation.sur_types),
            "heading": observation.heading,
        },
    }


def export_geojson(
    observation: SurObservation,
    ranked: Sequence["ScoredCandidate"],
    chosen: Optional["ScoredCandidate"],
) -> Dict[str, Any]:
    """
    FeatureCollection of one scoring result

    Args:
        observation: The scored observation (its location is the projection origin)
        ranked: Scored candidates, best first
        chosen: The selected candidate, if any

    Returns:
        GeoJSON dict: the observation Point, one Polygon per candidate with
        score/rank/provenance/chosen properties, and the ground truth if known
    """
    origin = observation.location
    features = [_observation_feature(observation)]
    for rank, scored in enumerate(ranked, start=1):
        candidate = scored.candidate
        features.append({
            "type": "Feature",
            "geometry": polygon_to_geojson(origin, candidate.geometry),
            "properties": {
                "role": "candidate",
                "score": float(scored.total),
                "rank": rank,
                "provenance": candidate.provenance.label,
                "chosen": chosen is not None and candidate is chosen.candidate,
                "tags": dict(candidate.tags),
            },
        })
    if observation.ground_truth is not None:
        features.append({
            "type": "Feature",
            "geometry": {
                "type": "Polygon",
                "coordinates": [
                    _geo_ring_coords(ring, exterior=(i == 0)) for i, ring in enumerate(observation.ground_truth)
                ],
            },
            "properties": {"role": "ground_truth"},
        })
    return {"type": "FeatureCollection", "features": features}


def candidates_to_geojson(center: GeoPoint, candidates: Sequence["CandidatePolygon"]) -> Dict[str, Any]:
    """FeatureCollection of an unscored candidate set around center"""
    features = [{
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [center.lon, center.lat]},
        "properties": {"role": "query"},
    }]
    for candidate in candidates:
        features.append({
            "type": "Feature",
            "geometry": polygon_to_geojson(center, candidate.geometry),
            "properties": {
                "role": "candidate",
                "provenance": candidate.provenance.label,
                "area_m2": round(candidate.geometry.area, 3),
                "tags": dict(candidate.tags),
            },
        })
    return {"type": "FeatureCollection", "features": features}
