"""
Shared pytest fixtures
"""

import shutil
import tempfile
from pathlib import Path

import pytest

from scripts.classifiers import ClassifierBank
from scripts.dataset_io import load_dataset
from scripts.osm_ingest import load_radius_table, parse_osm_xml

PROJECT_ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = PROJECT_ROOT / "config"
FIXTURES_DIR = PROJECT_ROOT / "artifacts" / "fixtures"
DEMO_WORLD = FIXTURES_DIR / "demo_world.osm"
DEMO_DATASET = FIXTURES_DIR / "demo_dataset"


@pytest.fixture
def temp_data_dir():
    """Create a temporary data directory for testing"""
    temp_dir = tempfile.mkdtemp()
    yield Path(temp_dir)
    shutil.rmtree(temp_dir)


@pytest.fixture(scope="session")
def bank():
    """Classifier bank with the shipped rules"""
    return ClassifierBank.from_directory(CONFIG_DIR / "rules")


@pytest.fixture(scope="session")
def radius_table():
    """Shipped node radius table"""
    return load_radius_table(CONFIG_DIR / "node_radii.txt")


@pytest.fixture(scope="session")
def demo_world():
    """Parsed hand-built OSM extract"""
    return parse_osm_xml(DEMO_WORLD)


@pytest.fixture(scope="session")
def demo_dataset():
    """Five labelled observations around the demo world"""
    return load_dataset(DEMO_DATASET)
