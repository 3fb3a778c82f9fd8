"""
Planar Geometry Kernel

Local projection of WGS84 coordinates into a meters frame, and the area,
centroid, containment, distance, overlay and buffering operations the
association metric and the distance classifiers are built on.

All lengths are meters, areas square meters, angles degrees.
"""

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence, Tuple

import numpy as np
import shapely
from shapely.errors import GEOSException
from shapely.geometry import LinearRing, Point, Polygon

from scripts.errors import DegenerateGeometryError, InvalidInputError, InvariantViolationError

EARTH_RADIUS_M = 6_371_000.0
METERS_PER_DEGREE = EARTH_RADIUS_M * math.pi / 180.0

# Equirectangular projection is only used at the 500 m working scale
LOCAL_SCALE_LIMIT_DEG = 1.0

# Epsilon policy
VERTEX_MERGE_TOLERANCE_M = 1e-6
SLIVER_AREA_TOLERANCE_M2 = 1e-6

DEFAULT_CIRCLE_SEGMENTS = 32
MIN_CIRCLE_SEGMENTS = 8


@dataclass(frozen=True)
class GeoPoint:
    """WGS84 coordinate in degrees"""
    lat: float
    lon: float

    def __post_init__(self):
        lat, lon = float(self.lat), float(self.lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise InvalidInputError(f"Non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= lat <= 90.0:
            raise InvalidInputError(f"Latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise InvalidInputError(f"Longitude {lon} outside [-180, 180]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)


@dataclass(frozen=True)
class PlanarPoint:
    """Meters east (x) and north (y) of a projection origin"""
    x: float
    y: float

    def __post_init__(self):
        x, y = float(self.x), float(self.y)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise InvalidInputError(f"Non-finite planar point ({self.x}, {self.y})")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def distance_to(self, other: "PlanarPoint") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


def _coincident(a: PlanarPoint, b: PlanarPoint) -> bool:
    return a.distance_to(b) < VERTEX_MERGE_TOLERANCE_M


@dataclass(frozen=True)
class Ring:
    """
    Simple closed ring; stored open (the closing vertex is implicit)
    """
    vertices: Tuple[PlanarPoint, ...]

    def __post_init__(self):
        vertices = tuple(self.vertices)
        object.__setattr__(self, "vertices", vertices)
        if len(vertices) < 3:
            raise InvariantViolationError(f"Ring needs at least 3 vertices, got {len(vertices)}")
        # the wrap-around pair also rejects a stored closing vertex
        for a, b in zip(vertices, vertices[1:] + vertices[:1]):
            if a == b:
                raise InvariantViolationError(f"Consecutive identical vertices at ({a.x}, {a.y})")
        if not LinearRing(self.coords).is_simple:
            raise InvariantViolationError("Ring is self-intersecting")

    @classmethod
    def from_coords(cls, coords: Iterable[Sequence[float]]) -> "Ring":
        """
        Build a ring from (x, y) pairs, open or closed

        Vertices closer than VERTEX_MERGE_TOLERANCE_M to their predecessor are merged.
        """
        points = []
        for x, y in coords:
            point = PlanarPoint(x, y)
            if points and _coincident(points[-1], point):
                continue
            points.append(point)
        while len(points) > 1 and _coincident(points[0], points[-1]):
            points.pop()
        return cls(tuple(points))

    @cached_property
    def coords(self) -> np.ndarray:
        return np.array([(v.x, v.y) for v in self.vertices], dtype=float)

    def oriented(self, counter_clockwise: bool = True) -> "Ring":
        """Return this ring with the requested winding"""
        if (ring_area(self) > 0) == counter_clockwise:
            return self
        return Ring(tuple(reversed(self.vertices)))

    def translated(self, dx: float, dy: float) -> "Ring":
        return Ring(tuple(PlanarPoint(v.x + dx, v.y + dy) for v in self.vertices))


@dataclass(frozen=True)
class AreaPolygon:
    """Outer ring minus pairwise-disjoint holes lying inside it"""
    outer: Ring
    holes: Tuple[Ring, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "holes", tuple(self.holes))
        if abs(ring_area(self.outer)) <= 0.0:
            raise DegenerateGeometryError("Outer ring has zero area")
        outer_shape = Polygon(self.outer.coords)
        hole_shapes = [Polygon(h.coords) for h in self.holes]
        for i, hole in enumerate(hole_shapes):
            if not outer_shape.covers(hole):
                raise InvariantViolationError(f"Hole {i} is not inside the outer ring")
            for j in range(i + 1, len(hole_shapes)):
                if hole.intersection(hole_shapes[j]).area > SLIVER_AREA_TOLERANCE_M2:
                    raise InvariantViolationError(f"Holes {i} and {j} overlap")

    @classmethod
    def from_coords(
        cls,
        outer: Iterable[Sequence[float]],
        holes: Iterable[Iterable[Sequence[float]]] = (),
    ) -> "AreaPolygon":
        return cls(Ring.from_coords(outer), tuple(Ring.from_coords(h) for h in holes))

    @cached_property
    def shape(self) -> Polygon:
        """Shapely view used for overlay, predicates and distances"""
        return Polygon(self.outer.coords, [h.coords for h in self.holes])

    @cached_property
    def area(self) -> float:
        return polygon_area(self)

    @cached_property
    def vertex_array(self) -> np.ndarray:
        return np.vstack([self.outer.coords] + [h.coords for h in self.holes])

    def translated(self, dx: float, dy: float) -> "AreaPolygon":
        return AreaPolygon(
            self.outer.translated(dx, dy),
            tuple(h.translated(dx, dy) for h in self.holes),
        )


def project(origin: GeoPoint, p: GeoPoint) -> PlanarPoint:
    """
    Local equirectangular projection centred on origin

    Args:
        origin: Projection origin (the observation location)
        p: Point to project

    Returns:
        Planar point in meters

    Raises:
        InvalidInputError: If p is more than a degree away from origin
    """
    dlat = p.lat - origin.lat
    dlon = (p.lon - origin.lon + 180.0) % 360.0 - 180.0
    if abs(dlat) >= LOCAL_SCALE_LIMIT_DEG or abs(dlon) >= LOCAL_SCALE_LIMIT_DEG:
        raise InvalidInputError(
            f"({p.lat}, {p.lon}) is outside the local frame around ({origin.lat}, {origin.lon})"
        )
    x = dlon * math.cos(math.radians(origin.lat)) * METERS_PER_DEGREE
    y = dlat * METERS_PER_DEGREE
    return PlanarPoint(x, y)


def unproject(origin: GeoPoint, q: PlanarPoint) -> GeoPoint:
    """Inverse of project for the same origin"""
    cos_lat = math.cos(math.radians(origin.lat))
    if cos_lat <= 1e-12:
        raise InvalidInputError("Cannot unproject around a pole")
    lat = origin.lat + q.y / METERS_PER_DEGREE
    lon = origin.lon + q.x / (cos_lat * METERS_PER_DEGREE)
    lon = (lon + 180.0) % 360.0 - 180.0
    return GeoPoint(lat, lon)


def polygon_from_geo(origin: GeoPoint, rings: Sequence[Sequence[GeoPoint]]) -> AreaPolygon:
    """
    Project WGS84 rings (outer first, then holes) into origin's frame

    Rings may be open or closed.
    """
    if not rings:
        raise InvalidInputError("Polygon needs an outer ring")
    projected = [[(q.x, q.y) for q in (project(origin, p) for p in ring)] for ring in rings]
    return AreaPolygon.from_coords(projected[0], projected[1:])


def ring_area(r: Ring) -> float:
    """Signed shoelace area; counter-clockwise is positive"""
    x, y = r.coords[:, 0], r.coords[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_area(p: AreaPolygon) -> float:
    """
    Area of the outer ring minus its holes

    Raises:
        InvariantViolationError: If the holes cover the whole outer area
    """
    area = abs(ring_area(p.outer)) - sum(abs(ring_area(h)) for h in p.holes)
    if area <= 0.0:
        raise InvariantViolationError("Holes exceed the outer ring area")
    return area


def centroid(p: AreaPolygon) -> PlanarPoint:
    """Area-weighted centroid of the region (holes excluded)"""
    if p.shape.area <= 0.0:
        raise DegenerateGeometryError("Centroid of a zero-area polygon")
    c = p.shape.centroid
    return PlanarPoint(c.x, c.y)


def contains(p: AreaPolygon, q: PlanarPoint) -> bool:
    """Point-in-polygon test; boundary points count as contained"""
    return bool(shapely.intersects_xy(p.shape, q.x, q.y))


def min_dist_to_vertices(p: AreaPolygon, q: PlanarPoint) -> float:
    verts = p.vertex_array
    return float(np.min(np.hypot(verts[:, 0] - q.x, verts[:, 1] - q.y)))


def min_dist_to_edges(p: AreaPolygon, q: PlanarPoint) -> float:
    """Distance to the nearest edge of outer or holes; 0 inside the region"""
    if contains(p, q):
        return 0.0
    return float(p.shape.boundary.distance(Point(q.x, q.y)))


def _overlay_order(p: AreaPolygon):
    return (p.shape.bounds, p.area, p.shape.wkb)


def intersection_area(a: AreaPolygon, b: AreaPolygon) -> float:
    """
    Area of the boolean intersection of two regions

    Operands are put in a canonical order first so the result is exactly
    commutative. Slivers below SLIVER_AREA_TOLERANCE_M2 count as no overlap.
    """
    if a == b:
        return polygon_area(a)
    ax0, ay0, ax1, ay1 = a.shape.bounds
    bx0, by0, bx1, by1 = b.shape.bounds
    if ax1 < bx0 or bx1 < ax0 or ay1 < by0 or by1 < ay0:
        return 0.0

    first, second = sorted((a, b), key=_overlay_order)
    try:
        area = first.shape.intersection(second.shape).area
    except GEOSException:
        # snap to the merge tolerance and retry
        area = shapely.intersection(first.shape, second.shape, grid_size=VERTEX_MERGE_TOLERANCE_M).area
    if area < SLIVER_AREA_TOLERANCE_M2:
        return 0.0
    return float(min(area, a.area, b.area))


def buffer_point(
    center: PlanarPoint,
    radius: float,
    segments: int = DEFAULT_CIRCLE_SEGMENTS,
) -> AreaPolygon:
    """
    Regular polygon approximating a circle

    Args:
        center: Circle center
        radius: Distance of every vertex from the center, meters
        segments: Number of vertices, at least MIN_CIRCLE_SEGMENTS

    Returns:
        Counter-clockwise polygon with its first vertex due east of center
    """
    if not math.isfinite(radius) or radius <= 0:
        raise InvalidInputError(f"Buffer radius must be positive, got {radius}")
    if segments < MIN_CIRCLE_SEGMENTS:
        raise InvalidInputError(f"Buffer needs at least {MIN_CIRCLE_SEGMENTS} segments, got {segments}")
    angles = 2.0 * math.pi * np.arange(segments) / segments
    xs = center.x + radius * np.cos(angles)
    ys = center.y + radius * np.sin(angles)
    return AreaPolygon(Ring(tuple(PlanarPoint(x, y) for x, y in zip(xs, ys))))
