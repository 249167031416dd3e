"""Spatial relation ontology and geometric predicates over bounding boxes.

Relations live on three axes: horizontal (left/right of), vertical
(above/below), and depth (in front of / behind).  Depth is the one
interpretive choice in this module: boxes are 2D, so "in front of" is read
as "bottom edge sits lower on the canvas" (closer to the viewer under the
usual standing-scene perspective).  The predicate is isolated in
:func:`evaluate` so the convention can be swapped without touching callers.

Directional truth carries a margin so that nearly-aligned boxes never count
as left/right/above/etc.; near/far thresholds leave a dead zone between them
so no pair is borderline both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Iterable, Protocol, Sequence

from .errors import ConflictingRelation, UnknownRelation


class Direction(str, Enum):
    LEFT_OF = "left_of"
    RIGHT_OF = "right_of"
    ABOVE = "above"
    BELOW = "below"
    IN_FRONT_OF = "in_front_of"
    BEHIND = "behind"

    @property
    def inverse(self) -> "Direction":
        return _DIRECTION_INVERSE[self]

    @property
    def axis(self) -> str:
        return _DIRECTION_AXIS[self]

    @property
    def phrase(self) -> str:
        return _DIRECTION_PHRASE[self]


class Distance(str, Enum):
    NEAR = "near"
    FAR = "far"

    @property
    def opposite(self) -> "Distance":
        return Distance.FAR if self is Distance.NEAR else Distance.NEAR

    @property
    def phrase(self) -> str:
        return "near" if self is Distance.NEAR else "far from"


_DIRECTION_INVERSE = {
    Direction.LEFT_OF: Direction.RIGHT_OF,
    Direction.RIGHT_OF: Direction.LEFT_OF,
    Direction.ABOVE: Direction.BELOW,
    Direction.BELOW: Direction.ABOVE,
    Direction.IN_FRONT_OF: Direction.BEHIND,
    Direction.BEHIND: Direction.IN_FRONT_OF,
}

_DIRECTION_AXIS = {
    Direction.LEFT_OF: "x",
    Direction.RIGHT_OF: "x",
    Direction.ABOVE: "y",
    Direction.BELOW: "y",
    Direction.IN_FRONT_OF: "depth",
    Direction.BEHIND: "depth",
}

_DIRECTION_PHRASE = {
    Direction.LEFT_OF: "to the left of",
    Direction.RIGHT_OF: "to the right of",
    Direction.ABOVE: "above",
    Direction.BELOW: "below",
    Direction.IN_FRONT_OF: "in front of",
    Direction.BEHIND: "behind",
}


class RelationKind(str, Enum):
    DIRECTIONAL = "directional"
    DISTANCE = "distance"
    BOTH = "both"


@dataclass(frozen=True)
class RelationSpec:
    """A canonical spatial relation: a directional part, a distance part, or both."""

    direction: Direction | None
    distance: Distance | None
    surface_phrase: str

    def __post_init__(self) -> None:
        if self.direction is None and self.distance is None:
            raise ValueError("relation needs a direction or a distance part")
        if not self.surface_phrase:
            raise ValueError("surface phrase must be non-empty")

    @property
    def canonical_phrase(self) -> str:
        """Comma-joined canonical surface form, e.g. ``"to the left of, near"``."""
        parts = []
        if self.direction is not None:
            parts.append(self.direction.phrase)
        if self.distance is not None:
            parts.append(self.distance.phrase)
        return ", ".join(parts)

    @property
    def sentence_phrase(self) -> str:
        """Canonical form joined with "and", for use inside question text."""
        parts = []
        if self.direction is not None:
            parts.append(self.direction.phrase)
        if self.distance is not None:
            parts.append(self.distance.phrase)
        return " and ".join(parts)

    def to_dict(self) -> dict:
        return {
            "direction": self.direction.value if self.direction else None,
            "distance": self.distance.value if self.distance else None,
            "surface_phrase": self.surface_phrase,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RelationSpec":
        return cls(
            direction=Direction(data["direction"]) if data.get("direction") else None,
            distance=Distance(data["distance"]) if data.get("distance") else None,
            surface_phrase=data["surface_phrase"],
        )

    @classmethod
    def of(cls, direction: Direction | None = None, distance: Distance | None = None) -> "RelationSpec":
        """Build a relation in canonical surface form."""
        rel = cls(direction=direction, distance=distance, surface_phrase="x")
        return cls(direction=direction, distance=distance, surface_phrase=rel.canonical_phrase)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box: top-left corner plus width and height, in pixels."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box sides must be positive, got {self.w}x{self.h}")

    @property
    def center_x(self) -> float:
        return self.x + self.w / 2

    @property
    def center_y(self) -> float:
        return self.y + self.h / 2

    @property
    def right(self) -> int:
        return self.x + self.w

    @property
    def bottom(self) -> int:
        return self.y + self.h

    def within(self, canvas: "Canvas") -> bool:
        return 0 <= self.x and self.right <= canvas.width and 0 <= self.y and self.bottom <= canvas.height

    def to_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_list(cls, values: Sequence[int]) -> "BoundingBox":
        x, y, w, h = values
        return cls(int(x), int(y), int(w), int(h))


def boxes_overlap(a: BoundingBox, b: BoundingBox) -> bool:
    """True when the intersection has strictly positive area (touching edges is fine)."""
    overlap_w = min(a.right, b.right) - max(a.x, b.x)
    overlap_h = min(a.bottom, b.bottom) - max(a.y, b.y)
    return overlap_w > 0 and overlap_h > 0


@dataclass(frozen=True)
class Canvas:
    """Canvas geometry plus the thresholds that give relations their meaning.

    ``margin`` is the minimum center/edge separation for a directional
    relation to hold; it defaults to 5% of the width.  ``near_fraction`` and
    ``far_fraction`` are fractions of the canvas diagonal and must leave a
    gap so that near and far can never hold at once.
    """

    width: int = 512
    height: int = 512
    margin: float | None = None
    near_fraction: float = 0.25
    far_fraction: float = 0.45

    def __post_init__(self) -> None:
        if self.margin is None:
            object.__setattr__(self, "margin", 0.05 * self.width)
        if self.width <= 0 or self.height <= 0:
            raise ValueError("canvas sides must be positive")
        if not self.near_fraction < self.far_fraction:
            raise ValueError("near_fraction must be strictly below far_fraction")
        if not self.margin < self.width / 4:
            raise ValueError("margin must be below a quarter of the canvas width")

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    @property
    def near_threshold(self) -> float:
        return self.near_fraction * self.diagonal

    @property
    def far_threshold(self) -> float:
        return self.far_fraction * self.diagonal

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "margin": self.margin,
            "near_fraction": self.near_fraction,
            "far_fraction": self.far_fraction,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Canvas":
        return cls(**data)


# --- synonym table ----------------------------------------------------------

def parse_synonym_table(text: str) -> dict[str, tuple[Direction | None, Distance | None]]:
    """Parse ``phrase TAB direction|- TAB distance|-`` lines into a lookup table."""
    table: dict[str, tuple[Direction | None, Distance | None]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ValueError(f"synonym table line {lineno}: expected 3 tab-separated fields")
        phrase, direction_token, distance_token = (f.strip() for f in fields)
        direction = None if direction_token == "-" else Direction(direction_token)
        distance = None if distance_token == "-" else Distance(distance_token)
        if direction is None and distance is None:
            raise ValueError(f"synonym table line {lineno}: phrase maps to nothing")
        table[phrase.lower()] = (direction, distance)
    return table


@lru_cache(maxsize=1)
def load_synonyms() -> dict[str, tuple[Direction | None, Distance | None]]:
    text = resources.files("spatialgen.data").joinpath("relation_synonyms.tsv").read_text("utf-8")
    return parse_synonym_table(text)


def canonicalize(phrase: str, table: dict | None = None) -> RelationSpec:
    """Map a free-form relation phrase to its canonical parts.

    Comma-separated compounds ("behind, far away") are split and merged into
    a single relation.  Unknown phrases raise rather than guess.
    """
    if not phrase or not phrase.strip():
        raise UnknownRelation("empty relation phrase")
    table = table if table is not None else load_synonyms()
    direction: Direction | None = None
    distance: Distance | None = None
    for raw_part in phrase.split(","):
        part = " ".join(raw_part.lower().split())
        if not part:
            continue
        if part not in table:
            raise UnknownRelation(f"unknown relation phrase: {raw_part.strip()!r}")
        dir_part, dist_part = table[part]
        if dir_part is not None:
            if direction is not None and direction is not dir_part:
                raise ConflictingRelation(f"{phrase!r} merges two directions")
            direction = dir_part
        if dist_part is not None:
            if distance is not None and distance is not dist_part:
                raise ConflictingRelation(f"{phrase!r} merges near and far")
            distance = dist_part
    if direction is None and distance is None:
        raise UnknownRelation(f"no relation parts in {phrase!r}")
    return RelationSpec(direction=direction, distance=distance, surface_phrase=" ".join(phrase.split()))


# --- geometric predicates -----------------------------------------------------

def _direction_holds(direction: Direction, a: BoundingBox, b: BoundingBox, canvas: Canvas) -> bool:
    delta = canvas.margin
    if direction is Direction.LEFT_OF:
        return a.center_x + delta <= b.center_x
    if direction is Direction.RIGHT_OF:
        return a.center_x >= b.center_x + delta
    if direction is Direction.ABOVE:
        return a.center_y + delta <= b.center_y
    if direction is Direction.BELOW:
        return a.center_y >= b.center_y + delta
    if direction is Direction.IN_FRONT_OF:
        return a.bottom >= b.bottom + delta
    if direction is Direction.BEHIND:
        return a.bottom + delta <= b.bottom
    raise AssertionError(direction)


def evaluate(rel: RelationSpec, a: BoundingBox, b: BoundingBox, canvas: Canvas) -> bool:
    """True when every part of the relation holds between boxes a and b."""
    if rel.direction is not None and not _direction_holds(rel.direction, a, b, canvas):
        return False
    if rel.distance is not None:
        gap = math.hypot(a.center_x - b.center_x, a.center_y - b.center_y)
        if rel.distance is Distance.NEAR and gap > canvas.near_threshold:
            return False
        if rel.distance is Distance.FAR and gap < canvas.far_threshold:
            return False
    return True


def invert(rel: RelationSpec) -> RelationSpec:
    """Swap the relation's point of view: direction flips, distance stays."""
    direction = rel.direction.inverse if rel.direction is not None else None
    flipped = RelationSpec(direction=direction, distance=rel.distance, surface_phrase="x")
    return RelationSpec(direction=direction, distance=rel.distance, surface_phrase=flipped.canonical_phrase)


def classify(rel: RelationSpec) -> RelationKind:
    if rel.direction is not None and rel.distance is not None:
        return RelationKind.BOTH
    if rel.direction is not None:
        return RelationKind.DIRECTIONAL
    return RelationKind.DISTANCE


# --- consistency checking -----------------------------------------------------

class TripletLike(Protocol):
    subject: str
    object: str

    @property
    def relation(self) -> RelationSpec: ...


@dataclass(frozen=True)
class ConsistencyReport:
    """Outcome of the per-axis cycle check; ``witness`` names a contradiction."""

    ok: bool
    axis: str | None = None
    witness: tuple = ()

    def __bool__(self) -> bool:
        return self.ok


def _axis_edge(direction: Direction, subject: str, obj: str) -> tuple[str, str]:
    """Normalize to a single orientation per axis: left-of / above / behind."""
    if direction in (Direction.LEFT_OF, Direction.ABOVE, Direction.BEHIND):
        return subject, obj
    return obj, subject


def _find_cycle(adjacency: dict[str, list[tuple[str, object]]]) -> list[object] | None:
    """Return the triplets along one directed cycle, or None when acyclic."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {node: WHITE for node in adjacency}
    parent_edge: dict[str, tuple[str, object]] = {}

    def visit(start: str) -> list[object] | None:
        stack: list[tuple[str, Iterable]] = [(start, iter(adjacency[start]))]
        color[start] = GRAY
        while stack:
            node, edges = stack[-1]
            advanced = False
            for nxt, trip in edges:
                if color.get(nxt, WHITE) == WHITE:
                    color[nxt] = GRAY
                    parent_edge[nxt] = (node, trip)
                    stack.append((nxt, iter(adjacency.get(nxt, []))))
                    advanced = True
                    break
                if color.get(nxt) == GRAY:
                    cycle = [trip]
                    cur = node
                    while cur != nxt:
                        prev, prev_trip = parent_edge[cur]
                        cycle.append(prev_trip)
                        cur = prev
                    cycle.reverse()
                    return cycle
            if not advanced:
                color[node] = BLACK
                stack.pop()
        return None

    for node in adjacency:
        if color[node] == WHITE:
            cycle = visit(node)
            if cycle is not None:
                return cycle
    return None


def check_consistency(triplets: Sequence[TripletLike]) -> ConsistencyReport:
    """Necessary-condition check that a triplet set admits some layout.

    Builds one directed order graph per axis (x, y, depth) and reports a
    contradiction when any of them contains a cycle.  Metric infeasibility
    (e.g. a chain of near-relations too long for the canvas) is not detected
    here; the layout solver surfaces it as an unsolvable instance.
    """
    per_axis: dict[str, dict[str, list[tuple[str, object]]]] = {"x": {}, "y": {}, "depth": {}}
    for trip in triplets:
        rel = trip.relation
        if rel.direction is None:
            continue
        axis = rel.direction.axis
        u, v = _axis_edge(rel.direction, trip.subject, trip.object)
        graph = per_axis[axis]
        graph.setdefault(u, []).append((v, trip))
        graph.setdefault(v, [])
    for axis in ("x", "y", "depth"):
        cycle = _find_cycle(per_axis[axis])
        if cycle is not None:
            return ConsistencyReport(ok=False, axis=axis, witness=tuple(cycle))
    return ConsistencyReport(ok=True)
