"""
FastAPI Application for SUR point-to-polygon association

This API provides endpoints for:
- Listing candidate OSM polygons around a point
- Scoring the candidates of one SUR observation and picking the best one

The OSM extract is read from SPTP_OSM_PATH once per process.
"""

import logging
from datetime import datetime
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional

from fastapi import Depends, FastAPI, HTTPException
from pydantic import BaseModel, Field

from scripts.classifiers import ClassifierBank, default_bank
from scripts.dataset_io import SampleRecord, candidates_to_geojson, export_geojson, observation_from_record
from scripts.ensemble_trainer import WeightVector, default_weights, score_all
from scripts.errors import DatasetError, InvalidInputError, OsmParseError
from scripts.geometry import GeoPoint
from scripts.osm_ingest import OsmExtract, candidates_within, default_radius_table, parse_osm_xml
from scripts.settings import get_settings

logger = logging.getLogger(__name__)

# Initialize FastAPI app
app = FastAPI(
    title="SUR Association API",
    description="API for associating space usage rule observations with OSM polygons",
    version="1.0.0",
)


# Pydantic models for requests
class CandidateQuery(BaseModel):
    """Point and radius for a candidate search"""
    lat: float = Field(ge=-90, le=90)
    lon: float = Field(ge=-180, le=180)
    radius: Optional[float] = Field(default=None, gt=0, description="Meters; configured default if omitted")


class ScoreRequest(BaseModel):
    """Observation to score, optionally with custom weights"""
    sample: SampleRecord
    weights: Optional[Dict[str, float]] = None
    radius: Optional[float] = Field(default=None, gt=0)


@lru_cache(maxsize=4)
def _load_world(path: str) -> OsmExtract:
    return parse_osm_xml(Path(path))


def get_world() -> OsmExtract:
    """OSM extract dependency"""
    osm_path = get_settings().osm_path
    if osm_path is None:
        raise HTTPException(status_code=503, detail="No OSM extract configured (set SPTP_OSM_PATH)")
    if not Path(osm_path).exists():
        logger.error(f"Configured OSM extract {osm_path} does not exist")
        raise HTTPException(status_code=503, detail="OSM extract unavailable")
    try:
        return _load_world(str(osm_path))
    except OsmParseError as e:
        logger.error(f"Cannot parse OSM extract {osm_path}: {e}")
        raise HTTPException(status_code=503, detail="OSM extract unavailable")


def get_bank() -> ClassifierBank:
    """Classifier bank dependency"""
    return default_bank()


@app.get("/")
async def root():
    """Root endpoint with API information"""
    return {
        "name": "SUR Association API",
        "version": "1.0.0",
        "status": "operational",
        "endpoints": {
            "health": "/health",
            "candidates": "/candidates",
            "score": "/score",
        },
    }


@app.get("/health")
async def health_check():
    """Health check endpoint"""
    osm_path = get_settings().osm_path
    return {
        "status": "healthy",
        "timestamp": datetime.now().isoformat(),
        "world_available": osm_path is not None and Path(osm_path).exists(),
    }


@app.post("/candidates")
def list_candidates(query: CandidateQuery, world: OsmExtract = Depends(get_world)) -> Dict[str, Any]:
    """
    Candidate polygons around a point

    Returns a GeoJSON FeatureCollection with the query point and every
    candidate polygon (provenance, area and tags as properties).
    """
    settings = get_settings()
    try:
        center = GeoPoint(query.lat, query.lon)
        radius = query.radius or settings.candidate_radius_m
        candidates = candidates_within(world, center, radius, default_radius_table(), settings.circle_segments)
        return candidates_to_geojson(center, candidates)
    except InvalidInputError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.exception(f"Error processing candidates request: {e}")
        raise HTTPException(status_code=500, detail="Error processing request")


@app.post("/score")
def score_observation(
    request: ScoreRequest,
    world: OsmExtract = Depends(get_world),
    bank: ClassifierBank = Depends(get_bank),
) -> Dict[str, Any]:
    """
    Score the candidates of one observation

    Returns ranked GeoJSON: the observation point, every candidate with its
    score, rank and chosen flag, and the ground truth if the sample has one.
    """
    settings = get_settings()
    try:
        observation = observation_from_record(request.sample)
        weights = WeightVector.from_dict(request.weights) if request.weights else default_weights()
        radius = request.radius or settings.candidate_radius_m
        candidates = candidates_within(
            world, observation.location, radius, default_radius_table(), settings.circle_segments
        )
        ranked = score_all(bank.context_for(observation, radius), candidates, weights, bank)
        return export_geojson(observation, ranked, ranked[0] if ranked else None)
    except (InvalidInputError, DatasetError, ValueError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.exception(f"Error processing score request: {e}")
        raise HTTPException(status_code=500, detail="Error processing request")


if __name__ == "__main__":
    import uvicorn
    # Run the API server
    uvicorn.run(app, host="0.0.0.0", port=8000)
