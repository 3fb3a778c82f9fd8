"""
Error types shared by the SUR association modules.

Input and geometry problems subclass ValueError so callers that only know
the builtin still catch them.
"""

from typing import Optional


class SurAssociationError(Exception):
    """Base class for every error raised by this package"""


class InvalidInputError(SurAssociationError, ValueError):
    """Coordinates, parameters or config values outside their valid range"""


class DegenerateGeometryError(SurAssociationError, ValueError):
    """Geometry with zero area where a positive area is required"""


class InvariantViolationError(SurAssociationError, ValueError):
    """A value object was constructed in a state its invariants forbid"""


class OsmParseError(SurAssociationError):
    """Malformed OSM XML; carries the position reported by the parser"""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class DatasetError(SurAssociationError):
    """Missing or corrupt dataset manifest"""


class TrainingDataError(DatasetError):
    """A sample cannot be used for training or evaluation"""

    def __init__(self, message: str, sample_id: Optional[str] = None):
        self.sample_id = sample_id
        prefix = f"sample '{sample_id}': " if sample_id is not None else ""
        super().__init__(f"{prefix}{message}")
