"""
Runtime settings and logging setup.

Values come from SPTP_* environment variables; a local .env file is loaded
first so development setups don't need to export anything.
"""

import logging
import os
import sys
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field

load_dotenv()

PROJECT_ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = PROJECT_ROOT / "config"

LOG_FORMAT = "[%(levelname)s] %(name)s: %(message)s"


class Settings(BaseModel):
    """Paths and defaults shared by the CLI and the API"""
    rules_dir: Path = CONFIG_DIR / "rules"
    radius_table_path: Path = CONFIG_DIR / "node_radii.txt"
    ga_config_path: Path = CONFIG_DIR / "ga_default.json"
    osm_path: Optional[Path] = None
    candidate_radius_m: float = Field(default=500.0, gt=0)
    circle_segments: int = Field(default=32, ge=8)
    log_level: str = "INFO"


def get_settings() -> Settings:
    """
    Build settings from the environment

    Returns:
        Settings with every SPTP_* override applied
    """
    overrides = {
        "rules_dir": os.getenv("SPTP_RULES_DIR"),
        "radius_table_path": os.getenv("SPTP_RADIUS_TABLE"),
        "ga_config_path": os.getenv("SPTP_GA_CONFIG"),
        "osm_path": os.getenv("SPTP_OSM_PATH"),
        "candidate_radius_m": os.getenv("SPTP_CANDIDATE_RADIUS_M"),
        "circle_segments": os.getenv("SPTP_CIRCLE_SEGMENTS"),
        "log_level": os.getenv("SPTP_LOG_LEVEL"),
    }
    return Settings(**{k: v for k, v in overrides.items() if v})


def configure_logging(level: Optional[str] = None) -> None:
    """Send log records to stderr; stdout is reserved for command output"""
    level_name = (level or get_settings().log_level).upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )
