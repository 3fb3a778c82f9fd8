"""
Builders and independent oracles shared by the test modules
"""

import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from scripts.dataset_io import SurObservation
from scripts.geometry import METERS_PER_DEGREE, AreaPolygon, GeoPoint
from scripts.osm_ingest import CandidatePolygon, EntityKind, Provenance

Coords = List[Tuple[float, float]]


def rect(x0: float, y0: float, x1: float, y1: float) -> AreaPolygon:
    return AreaPolygon.from_coords([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


def square(x0: float = 0.0, y0: float = 0.0, size: float = 1.0) -> AreaPolygon:
    return rect(x0, y0, x0 + size, y0 + size)


def make_candidate(
    polygon: AreaPolygon,
    tags: Optional[Dict[str, str]] = None,
    osm_id: int = 1,
    kind: EntityKind = EntityKind.WAY,
) -> CandidatePolygon:
    return CandidatePolygon(polygon, tags or {"building": "yes"}, Provenance(kind, osm_id))


def make_observation(
    sur_types: Sequence[str] = ("no_smoking",),
    heading: Optional[float] = None,
    location: GeoPoint = GeoPoint(0.0, 0.0),
    sample_id: str = "obs",
    ground_truth=None,
    image_path=None,
) -> SurObservation:
    return SurObservation(
        id=sample_id,
        location=location,
        sur_types=tuple(sur_types),
        heading=heading,
        image_path=image_path,
        ground_truth=ground_truth,
    )


def meters_to_deg(m: float) -> float:
    """Degrees for a distance in meters at the equator"""
    return m / METERS_PER_DEGREE


def osm_doc(*elements: str) -> bytes:
    return ("<?xml version='1.0' encoding='UTF-8'?>\n<osm version='0.6'>\n"
            + "\n".join(elements) + "\n</osm>\n").encode("utf-8")


def osm_node(node_id: int, x_m: float, y_m: float, tags: Optional[Dict[str, str]] = None) -> str:
    """Node placed x_m east and y_m north of (0, 0)"""
    tag_xml = "".join(f"<tag k='{k}' v='{v}'/>" for k, v in (tags or {}).items())
    return f"<node id='{node_id}' lat='{float(meters_to_deg(y_m))!r}' lon='{float(meters_to_deg(x_m))!r}'>{tag_xml}</node>"


def osm_way(way_id: int, refs: Sequence[int], tags: Optional[Dict[str, str]] = None) -> str:
    nds = "".join(f"<nd ref='{r}'/>" for r in refs)
    tag_xml = "".join(f"<tag k='{k}' v='{v}'/>" for k, v in (tags or {}).items())
    return f"<way id='{way_id}'>{nds}{tag_xml}</way>"


def osm_square(first_node_id: int, way_id: int, x0: float, y0: float, size: float,
               tags: Optional[Dict[str, str]] = None) -> List[str]:
    """Four nodes and a closed way forming an axis-aligned square (meters)"""
    ids = [first_node_id + i for i in range(4)]
    corners = [(x0, y0), (x0 + size, y0), (x0 + size, y0 + size), (x0, y0 + size)]
    nodes = [osm_node(i, x, y) for i, (x, y) in zip(ids, corners)]
    return nodes + [osm_way(way_id, ids + ids[:1], tags)]


def winding_number(coords: Sequence[Tuple[float, float]], x: float, y: float) -> int:
    """Winding number of a closed ring (given open) around (x, y)"""
    wn = 0
    n = len(coords)
    for i in range(n):
        x0, y0 = coords[i]
        x1, y1 = coords[(i + 1) % n]
        cross = (x1 - x0) * (y - y0) - (x - x0) * (y1 - y0)
        if y0 <= y < y1 and cross > 0:
            wn += 1
        elif y1 <= y < y0 and cross < 0:
            wn -= 1
    return wn


def segment_distance(px: float, py: float, a: Tuple[float, float], b: Tuple[float, float]) -> float:
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    length2 = dx * dx + dy * dy
    t = 0.0 if length2 == 0 else max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / length2))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def star_polygon(rng: np.random.Generator, n: int, cx: float, cy: float, r: float) -> Coords:
    """
    Simple star-shaped polygon: sorted angles, radii in [0.3 r, r]

    Angles are redrawn until every angular gap is below pi, which keeps the
    center in the kernel and the ring simple.
    """
    while True:
        angles = np.sort(rng.uniform(0, 2 * math.pi, n))
        gaps = np.diff(np.append(angles, angles[0] + 2 * math.pi))
        if gaps.max() < math.pi:
            break
    radii = rng.uniform(0.3 * r, r, n)
    return [(cx + rr * math.cos(a), cy + rr * math.sin(a)) for a, rr in zip(angles, radii)]


def convex_polygon(rng: np.random.Generator, n: int, cx: float, cy: float, a: float, b: float) -> Coords:
    """Convex polygon with vertices on an ellipse"""
    angles = np.sort(rng.uniform(0, 2 * math.pi, n))
    return [(cx + a * math.cos(t), cy + b * math.sin(t)) for t in angles]


def shoelace(coords: Sequence[Tuple[float, float]]) -> float:
    return 0.5 * sum(
        x0 * y1 - x1 * y0 for (x0, y0), (x1, y1) in zip(coords, list(coords[1:]) + list(coords[:1]))
    )


def clip_convex(subject: Coords, clipper: Coords) -> Coords:
    """Sutherland-Hodgman clip of subject by a counter-clockwise convex clipper"""
    output = list(subject)
    n = len(clipper)
    for i in range(n):
        a, b = clipper[i], clipper[(i + 1) % n]

        def inside(p):
            return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0

        def crossing(p, q):
            x1, y1, x2, y2 = p[0], p[1], q[0], q[1]
            x3, y3, x4, y4 = a[0], a[1], b[0], b[1]
            den = (x1 - x2) * (y3 - y4) - (y1 - y2) * (x3 - x4)
            t = ((x1 - x3) * (y3 - y4) - (y1 - y3) * (x3 - x4)) / den
            return (x1 + t * (x2 - x1), y1 + t * (y2 - y1))

        source, output = output, []
        if not source:
            break
        prev = source[-1]
        for cur in source:
            if inside(cur):
                if not inside(prev):
                    output.append(crossing(prev, cur))
                output.append(cur)
            elif inside(prev):
                output.append(crossing(prev, cur))
            prev = cur
    return output
