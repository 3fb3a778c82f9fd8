"""
OSM Ingestion Module

Parses OSM XML extracts and turns ways, multipolygon relations and tagged
nodes into candidate polygons around an observation point.
"""

import io
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from lxml import etree
from shapely.geometry import Polygon

from scripts.errors import InvalidInputError, OsmParseError
from scripts.geometry import (
    DEFAULT_CIRCLE_SEGMENTS,
    METERS_PER_DEGREE,
    AreaPolygon,
    GeoPoint,
    PlanarPoint,
    Ring,
    buffer_point,
    min_dist_to_edges,
    polygon_from_geo,
    project,
)
from scripts.settings import get_settings

logger = logging.getLogger(__name__)

DEFAULT_CANDIDATE_RADIUS_M = 500.0

# Bookkeeping keys that say nothing about what a feature is
META_TAG_KEYS = {"created_by", "source", "note", "fixme", "FIXME", "attribution"}

# Elements that carry no entity of their own
_ENTITY_CHILDREN = {"tag", "nd", "member"}
_CONTAINER_ELEMENTS = {"osm", "bounds", "bound", "meta", "note", "remark"}


class EntityKind(str, Enum):
    NODE = "node"
    WAY = "way"
    RELATION = "relation"


_KIND_RANK = {EntityKind.WAY: 0, EntityKind.RELATION: 1, EntityKind.NODE: 2}


@dataclass(frozen=True)
class RelationMember:
    kind: EntityKind
    ref: int
    role: str


@dataclass(frozen=True)
class OsmEntity:
    """
    One node, way or relation with its tags

    Only the payload field matching the kind is populated.
    """
    id: int
    kind: EntityKind
    tags: Mapping[str, str]
    location: Optional[GeoPoint] = None
    node_refs: Tuple[int, ...] = ()
    members: Tuple[RelationMember, ...] = ()

    @property
    def is_closed(self) -> bool:
        return len(self.node_refs) > 1 and self.node_refs[0] == self.node_refs[-1]


@dataclass
class OsmExtract:
    """Entity collection of one parsed document; treat as read-only after parsing"""
    nodes: Dict[int, OsmEntity] = field(default_factory=dict)
    ways: Dict[int, OsmEntity] = field(default_factory=dict)
    relations: Dict[int, OsmEntity] = field(default_factory=dict)
    dangling_refs: Dict[int, Tuple[int, ...]] = field(default_factory=dict)
    skipped_elements: int = 0
    diagnostics: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.nodes) + len(self.ways) + len(self.relations)


@dataclass(frozen=True)
class TagPattern:
    """key=value tag matcher; value "*" matches any value of the key"""
    key: str
    value: str = "*"

    @classmethod
    def parse(cls, text: str) -> "TagPattern":
        key, sep, value = text.strip().partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise InvalidInputError(f"Tag pattern must look like key=value, got '{text}'")
        return cls(key, value)

    def matches(self, tags: Mapping[str, str]) -> bool:
        if self.key not in tags:
            return False
        return self.value == "*" or tags[self.key] == self.value

    def __str__(self) -> str:
        return f"{self.key}={self.value}"


@dataclass(frozen=True)
class RadiusTable:
    """Ordered (pattern, radius) rules for buffering nodes; first match wins"""
    rules: Tuple[Tuple[TagPattern, float], ...]
    default_radius: float

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        for pattern, radius in self.rules:
            if not radius > 0:
                raise InvalidInputError(f"Radius for {pattern} must be positive, got {radius}")
        if not self.default_radius > 0:
            raise InvalidInputError(f"Default radius must be positive, got {self.default_radius}")

    @property
    def max_radius(self) -> float:
        return max([self.default_radius] + [r for _, r in self.rules])


@dataclass(frozen=True)
class Provenance:
    """Where a candidate came from; part numbers the polygons of one relation"""
    kind: EntityKind
    osm_id: int
    buffer_radius: Optional[float] = None
    part: int = 0

    @property
    def sort_key(self) -> Tuple[int, int, int]:
        return (self.osm_id, _KIND_RANK[self.kind], self.part)

    @property
    def label(self) -> str:
        text = f"{self.kind.value}/{self.osm_id}"
        if self.buffer_radius is not None:
            text += f"@{self.buffer_radius:g}m"
        if self.part:
            text += f"#{self.part}"
        return text


@dataclass(frozen=True, eq=False)
class CandidatePolygon:
    """Element of the candidate set, projected into the query's local frame"""
    geometry: AreaPolygon
    tags: Mapping[str, str]
    provenance: Provenance

    def __post_init__(self):
        if not self.tags:
            raise InvalidInputError(f"Candidate {self.provenance.label} has no tags")


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _read_tags(elem) -> Dict[str, str]:
    return {t.get("k"): t.get("v", "") for t in elem.iterchildren("tag") if t.get("k") is not None}


def _read_entity(elem) -> OsmEntity:
    kind = EntityKind(elem.tag)
    entity_id = int(elem.get("id"))
    tags = _read_tags(elem)
    if kind is EntityKind.NODE:
        location = GeoPoint(float(elem.get("lat")), float(elem.get("lon")))
        return OsmEntity(entity_id, kind, tags, location=location)
    if kind is EntityKind.WAY:
        refs = tuple(int(nd.get("ref")) for nd in elem.iterchildren("nd"))
        return OsmEntity(entity_id, kind, tags, node_refs=refs)
    members = []
    for m in elem.iterchildren("member"):
        try:
            members.append(RelationMember(EntityKind(m.get("type")), int(m.get("ref")), m.get("role", "")))
        except ValueError:
            logger.debug(f"Relation {entity_id}: ignoring member of type {m.get('type')!r}")
    return OsmEntity(entity_id, kind, tags, members=tuple(members))


def parse_osm_xml(source: Union[str, Path, bytes, BinaryIO]) -> OsmExtract:
    """
    Parse an OSM XML document in a single streaming pass

    Args:
        source: File path, raw bytes or a binary stream

    Returns:
        OsmExtract with every node, way and relation and their tags

    Raises:
        OsmParseError: On malformed XML or unusable entity attributes
    """
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    elif isinstance(source, Path):
        source = str(source)

    extract = OsmExtract()
    tables = {
        EntityKind.NODE: extract.nodes,
        EntityKind.WAY: extract.ways,
        EntityKind.RELATION: extract.relations,
    }
    try:
        for _, elem in etree.iterparse(source, events=("end",)):
            tag = elem.tag
            if tag in _ENTITY_CHILDREN or tag in _CONTAINER_ELEMENTS:
                continue
            if tag not in ("node", "way", "relation"):
                extract.skipped_elements += 1
                continue
            if elem.get("visible") == "false":
                continue
            try:
                entity = _read_entity(elem)
            except (TypeError, ValueError) as e:
                raise OsmParseError(f"Invalid <{tag}> element: {e}", elem.sourceline) from e

            table = tables[entity.kind]
            if entity.id in table:
                extract.diagnostics.append(f"duplicate {tag} id {entity.id} ignored")
            else:
                table[entity.id] = entity

            # entities are fully read; drop them from the tree
            elem.clear()
            while elem.getprevious() is not None:
                del elem.getparent()[0]
    except etree.XMLSyntaxError as e:
        line, column = e.position
        raise OsmParseError(f"Malformed OSM XML: {e.msg}", line, column) from e

    for way in extract.ways.values():
        missing = tuple(r for r in way.node_refs if r not in extract.nodes)
        if missing:
            extract.dangling_refs[way.id] = missing

    logger.info(
        f"Parsed {len(extract.nodes)} nodes, {len(extract.ways)} ways, "
        f"{len(extract.relations)} relations"
    )
    if extract.skipped_elements:
        logger.warning(f"Skipped {extract.skipped_elements} unknown element(s)")
    if extract.dangling_refs:
        logger.warning(f"{len(extract.dangling_refs)} way(s) reference nodes missing from the extract")
    return extract


# ---------------------------------------------------------------------------
# Polygon assembly
# ---------------------------------------------------------------------------

def assemble_way_polygon(
    way: OsmEntity,
    nodes: Mapping[int, OsmEntity],
    origin: GeoPoint,
) -> Optional[AreaPolygon]:
    """
    Polygon of a closed way, or None when the way is not a usable area

    Args:
        way: Way entity
        nodes: Node lookup by id
        origin: Projection origin

    Returns:
        Hole-free polygon if the way is closed, has at least 4 refs that all
        resolve, and forms a simple ring; otherwise None
    """
    if way.kind is not EntityKind.WAY:
        raise InvalidInputError(f"Expected a way, got {way.kind.value} {way.id}")
    refs = way.node_refs
    if len(refs) < 4 or refs[0] != refs[-1]:
        return None
    if any(r not in nodes for r in refs):
        return None
    try:
        return polygon_from_geo(origin, [[nodes[r].location for r in refs]])
    except ValueError:
        return None


def _stitch_rings(sequences: List[List[int]]) -> Tuple[List[List[int]], List[List[int]]]:
    """Join node-id sequences end to end; returns (closed rings, leftovers)"""
    rings = [s for s in sequences if len(s) > 1 and s[0] == s[-1]]
    pending = [list(s) for s in sequences if len(s) > 1 and s[0] != s[-1]]
    leftovers = []
    while pending:
        current = pending.pop(0)
        progressed = True
        while current[0] != current[-1] and progressed:
            progressed = False
            for i, seg in enumerate(pending):
                if seg[0] == current[-1]:
                    current = current + seg[1:]
                elif seg[-1] == current[-1]:
                    current = current + seg[-2::-1]
                elif seg[-1] == current[0]:
                    current = seg[:-1] + current
                elif seg[0] == current[0]:
                    current = seg[:0:-1] + current
                else:
                    continue
                pending.pop(i)
                progressed = True
                break
        if current[0] == current[-1]:
            rings.append(current)
        else:
            leftovers.append(current)
    return rings, leftovers


def _rings_for_role(
    rel: OsmEntity,
    role: str,
    ways: Mapping[int, OsmEntity],
    nodes: Mapping[int, OsmEntity],
    origin: GeoPoint,
    diagnostics: List[str],
) -> List[Ring]:
    sequences = []
    for member in rel.members:
        if member.kind is not EntityKind.WAY or member.role != role:
            continue
        way = ways.get(member.ref)
        if way is None or any(r not in nodes for r in way.node_refs):
            diagnostics.append(f"relation {rel.id}: {role} way {member.ref} is missing or incomplete")
            continue
        sequences.append(list(way.node_refs))

    closed, leftovers = _stitch_rings(sequences)
    for seq in leftovers:
        diagnostics.append(f"relation {rel.id}: {role} chain {seq[0]}..{seq[-1]} does not close")

    rings = []
    for seq in closed:
        try:
            points = [project(origin, nodes[r].location) for r in seq]
            rings.append(Ring.from_coords((p.x, p.y) for p in points))
        except ValueError as e:
            diagnostics.append(f"relation {rel.id}: unusable {role} ring ({e})")
    return rings


def assemble_multipolygon(
    rel: OsmEntity,
    ways: Mapping[int, OsmEntity],
    nodes: Mapping[int, OsmEntity],
    origin: GeoPoint,
    diagnostics: Optional[List[str]] = None,
) -> List[AreaPolygon]:
    """
    Polygons of a type=multipolygon relation

    Outer member ways are stitched into closed rings, inner rings become holes
    of the smallest outer ring that covers them. One polygon per outer ring.

    Args:
        rel: Relation entity
        ways: Way lookup by id
        nodes: Node lookup by id
        origin: Projection origin
        diagnostics: Optional list that collects problems found on the way

    Returns:
        Polygons, empty if no outer ring closes
    """
    if diagnostics is None:
        diagnostics = []
    if rel.kind is not EntityKind.RELATION or rel.tags.get("type") != "multipolygon":
        diagnostics.append(f"{rel.kind.value} {rel.id} is not a multipolygon relation")
        return []

    for member in rel.members:
        if member.kind is EntityKind.WAY and member.role not in ("outer", "inner"):
            diagnostics.append(f"relation {rel.id}: ignoring member way {member.ref} with role '{member.role}'")

    outers = _rings_for_role(rel, "outer", ways, nodes, origin, diagnostics)
    if not outers:
        diagnostics.append(f"relation {rel.id}: no closed outer ring, skipped")
        return []
    inners = _rings_for_role(rel, "inner", ways, nodes, origin, diagnostics)

    outer_shapes = [Polygon(r.coords) for r in outers]
    holes: List[List[Ring]] = [[] for _ in outers]
    for inner in inners:
        inner_shape = Polygon(inner.coords)
        owners = [i for i, shape in enumerate(outer_shapes) if shape.covers(inner_shape)]
        if not owners:
            diagnostics.append(f"relation {rel.id}: inner ring outside every outer ring")
            continue
        owner = min(owners, key=lambda i: outer_shapes[i].area)
        holes[owner].append(inner)

    polygons = []
    for outer, outer_holes in zip(outers, holes):
        try:
            polygons.append(AreaPolygon(outer, tuple(outer_holes)))
        except ValueError as e:
            diagnostics.append(f"relation {rel.id}: dropped invalid part ({e})")
    return polygons


# ---------------------------------------------------------------------------
# Node buffering
# ---------------------------------------------------------------------------

def parse_radius_table(text: str, source: str = "<string>") -> RadiusTable:
    """
    Parse the flat-text radius table

    One "key=value radius_m" rule per line, "default radius_m" as the last
    entry; blank lines and # comments are ignored.
    """
    rules = []
    default = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if default is not None:
            raise InvalidInputError(f"{source}:{lineno}: entries after 'default' are not allowed")
        parts = line.split()
        if len(parts) != 2:
            raise InvalidInputError(f"{source}:{lineno}: expected '<key=value> <radius_m>', got '{line}'")
        try:
            radius = float(parts[1])
        except ValueError:
            raise InvalidInputError(f"{source}:{lineno}: radius '{parts[1]}' is not a number")
        if parts[0] == "default":
            default = radius
        else:
            rules.append((TagPattern.parse(parts[0]), radius))
    if default is None:
        raise InvalidInputError(f"{source}: missing 'default <radius_m>' entry")
    return RadiusTable(tuple(rules), default)


def load_radius_table(path: Union[str, Path]) -> RadiusTable:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"Radius table not found at {path}")
    return parse_radius_table(path.read_text(encoding="utf-8"), source=str(path))


def default_radius_table() -> RadiusTable:
    """Radius table shipped in config/ (or SPTP_RADIUS_TABLE)"""
    return load_radius_table(get_settings().radius_table_path)


def node_radius(tags: Mapping[str, str], table: RadiusTable) -> float:
    """Buffer radius of the first matching rule, else the table default"""
    for pattern, radius in table.rules:
        if pattern.matches(tags):
            return radius
    return table.default_radius


# ---------------------------------------------------------------------------
# Candidate query
# ---------------------------------------------------------------------------

def candidate_tags(tags: Mapping[str, str], drop: Iterable[str] = ()) -> Dict[str, str]:
    """Tags that describe the feature (bookkeeping keys removed)"""
    excluded = META_TAG_KEYS.union(drop)
    return {k: v for k, v in tags.items() if k not in excluded}



def _consumed_members(rel: OsmEntity, rel_tags: Mapping[str, str], ways: Mapping[int, OsmEntity]) -> List[int]:
    """
    Member ways whose geometry the relation already represents

    Outer ways always are. Other members stay candidates of their own when
    they carry tags beyond the relation's, e.g. a tagged lake forming a
    hole in a park.
    """
    consumed = []
    for member in rel.members:
        if member.kind is not EntityKind.WAY:
            continue
        way = ways.get(member.ref)
        own_tags = candidate_tags(way.tags) if way is not None else {}
        if member.role == "outer" or own_tags.items() <= rel_tags.items():
            consumed.append(member.ref)
    return consumed


@dataclass(frozen=True)
class _SearchBox:
    south: float
    west: float
    north: float
    east: float

    @classmethod
    def around(cls, center: GeoPoint, reach_m: float) -> "_SearchBox":
        dlat = reach_m / METERS_PER_DEGREE
        dlon = reach_m / (METERS_PER_DEGREE * max(math.cos(math.radians(center.lat)), 1e-9))
        return cls(center.lat - dlat, center.lon - dlon, center.lat + dlat, center.lon + dlon)

    def touches(self, points: Sequence[GeoPoint]) -> bool:
        if not points:
            return False
        lats = [p.lat for p in points]
        lons = [p.lon for p in points]
        return not (
            max(lats) < self.south or min(lats) > self.north
            or max(lons) < self.west or min(lons) > self.east
        )


def _within(polygon: AreaPolygon, radius: float) -> bool:
    return min_dist_to_edges(polygon, PlanarPoint(0.0, 0.0)) <= radius


def _way_points(way: Optional[OsmEntity], nodes: Mapping[int, OsmEntity]) -> List[GeoPoint]:
    if way is None:
        return []
    return [nodes[r].location for r in way.node_refs if r in nodes]


def candidates_within(
    extract: OsmExtract,
    center: GeoPoint,
    radius: float = DEFAULT_CANDIDATE_RADIUS_M,
    radius_table: Optional[RadiusTable] = None,
    segments: int = DEFAULT_CIRCLE_SEGMENTS,
) -> List[CandidatePolygon]:
    """
    All candidate polygons intersecting the disk of the given radius

    Args:
        extract: Parsed OSM entities
        center: Observation location; also the projection origin
        radius: Disk radius in meters
        radius_table: Buffer radii for tagged nodes (shipped table by default)
        segments: Vertices per buffered node

    Returns:
        Candidates ordered by ascending provenance id
    """
    if not radius > 0:
        raise InvalidInputError(f"Search radius must be positive, got {radius}")
    table = radius_table or default_radius_table()
    area_box = _SearchBox.around(center, radius)
    node_box = _SearchBox.around(center, radius + table.max_radius)
    nodes, ways = extract.nodes, extract.ways

    candidates: List[CandidatePolygon] = []
    consumed_ways = set()

    for rel in extract.relations.values():
        if rel.tags.get("type") != "multipolygon":
            continue
        tags = candidate_tags(rel.tags, drop=("type",))
        if not tags:
            # old-style multipolygon: the tags live on the member ways
            continue
        member_ways = [m.ref for m in rel.members if m.kind is EntityKind.WAY]
        points = [p for w in member_ways for p in _way_points(ways.get(w), nodes)]
        if not area_box.touches(points):
            continue
        diagnostics: List[str] = []
        polygons = assemble_multipolygon(rel, ways, nodes, center, diagnostics)
        for message in diagnostics:
            logger.debug(message)
        if polygons:
            consumed_ways.update(_consumed_members(rel, tags, ways))
        for part, polygon in enumerate(polygons):
            if _within(polygon, radius):
                candidates.append(CandidatePolygon(polygon, tags, Provenance(EntityKind.RELATION, rel.id, part=part)))

    for way in ways.values():
        if way.id in consumed_ways or not way.is_closed:
            continue
        tags = candidate_tags(way.tags)
        if not tags or tags.get("area") == "no":
            continue
        if not area_box.touches(_way_points(way, nodes)):
            continue
        polygon = assemble_way_polygon(way, nodes, center)
        if polygon is not None and _within(polygon, radius):
            candidates.append(CandidatePolygon(polygon, tags, Provenance(EntityKind.WAY, way.id)))

    for node in nodes.values():
        tags = candidate_tags(node.tags)
        if not tags or not node_box.touches([node.location]):
            continue
        buffer_radius = node_radius(tags, table)
        try:
            node_xy = project(center, node.location)
        except InvalidInputError:
            continue
        if math.hypot(node_xy.x, node_xy.y) > radius + buffer_radius:
            continue
        polygon = buffer_point(node_xy, buffer_radius, segments)
        if _within(polygon, radius):
            provenance = Provenance(EntityKind.NODE, node.id, buffer_radius=buffer_radius)
            candidates.append(CandidatePolygon(polygon, tags, provenance))

    candidates.sort(key=lambda c: c.provenance.sort_key)
    logger.debug(f"{len(candidates)} candidate(s) within {radius:g} m of ({center.lat}, {center.lon})")
    return candidates


def main():
    """
    Print the candidate set around a point
    """
    import argparse

    parser = argparse.ArgumentParser(description="List OSM candidate polygons around a point")
    parser.add_argument("--osm", required=True, help="OSM XML file")
    parser.add_argument("--lat", type=float, required=True)
    parser.add_argument("--lon", type=float, required=True)
    parser.add_argument("--radius", type=float, default=DEFAULT_CANDIDATE_RADIUS_M)
    args = parser.parse_args()

    extract = parse_osm_xml(Path(args.osm))
    for candidate in candidates_within(extract, GeoPoint(args.lat, args.lon), args.radius):
        tags = ", ".join(f"{k}={v}" for k, v in sorted(candidate.tags.items()))
        print(f"{candidate.provenance.label:<24} {candidate.geometry.area:>12.1f} m2  {tags}")


if __name__ == "__main__":
    main()
