"""Layout solving: place one non-overlapping box per entity so that every
triplet in the graph is geometrically true on the canvas.

The solver is rejection sampling with structure: box sizes come from priors,
directionally-constrained coordinates are placed along a random linear
extension of the per-axis order graphs, unconstrained coordinates are
jittered uniformly, and the whole candidate is then verified with the same
relation predicates the rest of the system uses.  Instances are tiny (at
most a handful of boxes), so resampling is cheap and the accept step makes
the solver trivially sound.

Depth constraints (in front of / behind) order bottom edges, so they are
folded into vertical placement with per-edge gaps that account for the two
box heights.
"""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

from .errors import (
    CaptionMentionsNegative,
    CaptionMissingEntity,
    EntityMismatch,
    InconsistentInput,
)
from .graphs import CatalogObject, SpatialKG, SubsetSelection, Triplet
from .relations import BoundingBox, Canvas, Direction, boxes_overlap, check_consistency, evaluate
from .seeds import derive_seed, stable_id

if TYPE_CHECKING:
    from .backends.base import TextGenBackend

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SizePrior:
    """Box-size sampling ranges, globally and per object category."""

    min_side: int = 48
    max_side: int = 160
    aspect_min: float = 0.75
    aspect_max: float = 1.33
    per_category: Mapping[str, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.min_side > self.max_side or self.min_side <= 0:
            raise ValueError("size prior needs 0 < min_side <= max_side")
        if self.aspect_min > self.aspect_max:
            raise ValueError("aspect range inverted")

    def side_range(self, label: str) -> tuple[int, int]:
        return self.per_category.get(label, (self.min_side, self.max_side))


@dataclass(frozen=True)
class Layout:
    skg_id: str
    boxes: Mapping[str, BoundingBox]
    canvas: Canvas
    solver_seed: int
    attempts_used: int

    def to_dict(self, entity_order: Sequence[str] | None = None) -> dict:
        order = list(entity_order) if entity_order is not None else sorted(self.boxes)
        return {
            "skg_id": self.skg_id,
            "boxes": {eid: self.boxes[eid].to_list() for eid in order},
            "canvas": self.canvas.to_dict(),
            "solver_seed": self.solver_seed,
            "attempts_used": self.attempts_used,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Layout":
        return cls(
            skg_id=data["skg_id"],
            boxes={eid: BoundingBox.from_list(vals) for eid, vals in data["boxes"].items()},
            canvas=Canvas.from_dict(data["canvas"]),
            solver_seed=data["solver_seed"],
            attempts_used=data["attempts_used"],
        )


@dataclass
class SceneInstance:
    """One graph grounded on a canvas: the unit of downstream pipeline work."""

    instance_id: str
    skg: SpatialKG
    layout: Layout
    caption: str
    negative_object: CatalogObject | None = None
    image_variants: list = field(default_factory=list)

    @property
    def entity_count(self) -> int:
        return len(self.skg.entities)

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "skg": self.skg.to_dict(),
            "layout": self.layout.to_dict(entity_order=self.skg.entity_ids()),
            "caption": self.caption,
            "negative_object": self.negative_object.to_dict() if self.negative_object else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SceneInstance":
        return cls(
            instance_id=data["instance_id"],
            skg=SpatialKG.from_dict(data["skg"]),
            layout=Layout.from_dict(data["layout"]),
            caption=data["caption"],
            negative_object=(
                CatalogObject.from_dict(data["negative_object"]) if data.get("negative_object") else None
            ),
        )


# --- solver ---------------------------------------------------------------------


def _random_linear_extension(
    nodes: Sequence[str],
    edges: Sequence[tuple[str, str]],
    rng: random.Random,
) -> list[str] | None:
    """Random topological order, or None when the edge set is cyclic."""
    indegree = {node: 0 for node in nodes}
    outgoing: dict[str, list[str]] = {node: [] for node in nodes}
    for u, v in edges:
        outgoing[u].append(v)
        indegree[v] += 1
    ready = sorted(node for node, deg in indegree.items() if deg == 0)
    order: list[str] = []
    while ready:
        node = ready.pop(rng.randrange(len(ready)))
        order.append(node)
        for nxt in outgoing[node]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                ready.append(nxt)
        ready.sort()
    return order if len(order) == len(nodes) else None


def _place_axis(
    order: Sequence[str],
    gaps: Mapping[tuple[str, str], float],
    half_extent: Mapping[str, float],
    length: int,
    reserve_step: float,
    rng: random.Random,
) -> dict[str, float] | None:
    """Sample centers along one axis honoring pairwise minimum gaps."""
    preds: dict[str, list[str]] = {node: [] for node in order}
    for (u, v) in gaps:
        preds[v].append(u)
    centers: dict[str, float] = {}
    for index, node in enumerate(order):
        low = half_extent[node]
        for pred in preds[node]:
            low = max(low, centers[pred] + gaps[(pred, node)])
        remaining = len(order) - index - 1
        high = length - half_extent[node] - remaining * reserve_step
        if low > high:
            return None
        centers[node] = rng.uniform(low, high)
    return centers


def solve_layout(
    skg: SpatialKG,
    canvas: Canvas,
    priors: SizePrior,
    seed: int,
    max_attempts: int = 1000,
) -> Layout | None:
    """Find a satisfying layout, or None (unsat) after ``max_attempts`` tries.

    Deterministic given the seed; each attempt draws from its own derived
    RNG, so success with N attempts implies the identical layout with any
    larger budget.
    """
    report = check_consistency(skg.triplets)
    if not report.ok:
        raise InconsistentInput(f"graph {skg.id} has a {report.axis}-axis contradiction")

    entity_ids = list(skg.entity_ids())
    labels = {e.id: e.base_object.label for e in skg.entities}
    x_edges: list[tuple[str, str]] = []
    y_edges: list[tuple[str, str]] = []          # u above v
    depth_edges: list[tuple[str, str]] = []      # u behind v (higher bottom edge)
    for trip in skg.triplets:
        direction = trip.relation.direction
        if direction is None:
            continue
        u, v = (trip.subject, trip.object)
        if direction in (Direction.RIGHT_OF, Direction.BELOW, Direction.IN_FRONT_OF):
            u, v = v, u
        if direction.axis == "x":
            x_edges.append((u, v))
        elif direction.axis == "y":
            y_edges.append((u, v))
        else:
            depth_edges.append((u, v))

    pad = 2.0  # absorbs integer rounding of box corners
    gap = canvas.margin + pad
    reserve = canvas.margin + 4.0
    max_side_w = min(priors.max_side, canvas.width // 2)
    max_side_h = min(priors.max_side, canvas.height // 2)

    for attempt in range(max_attempts):
        rng = random.Random(derive_seed(seed, "attempt", attempt))

        widths: dict[str, int] = {}
        heights: dict[str, int] = {}
        for eid in entity_ids:
            lo, hi = priors.side_range(labels[eid])
            w = rng.randint(lo, min(hi, max_side_w))
            aspect = rng.uniform(priors.aspect_min, priors.aspect_max)
            heights[eid] = max(lo, min(int(round(w * aspect)), min(hi, max_side_h)))
            widths[eid] = w

        # horizontal axis
        x_nodes = sorted({n for e in x_edges for n in e})
        x_order = _random_linear_extension(x_nodes, x_edges, rng)
        if x_order is None:
            continue
        x_centers = _place_axis(
            x_order,
            {edge: gap for edge in x_edges},
            {eid: widths[eid] / 2 for eid in x_nodes},
            canvas.width,
            reserve,
            rng,
        )
        if x_centers is None:
            continue

        # vertical axis: above/below on centers, front/behind on bottom edges
        y_gaps: dict[tuple[str, str], float] = {}
        for edge in y_edges:
            y_gaps[edge] = max(y_gaps.get(edge, 0.0), gap)
        for u, v in depth_edges:
            # bottom(u) + margin <= bottom(v)  =>  cy(v) >= cy(u) + margin + (h_u - h_v)/2
            needed = gap + (heights[u] - heights[v]) / 2
            y_gaps[(u, v)] = max(y_gaps.get((u, v), 0.0), needed)
        y_nodes = sorted({n for e in y_gaps for n in e})
        y_order = _random_linear_extension(y_nodes, list(y_gaps), rng)
        if y_order is not None:
            y_centers = _place_axis(
                y_order,
                y_gaps,
                {eid: heights[eid] / 2 for eid in y_nodes},
                canvas.height,
                reserve,
                rng,
            )
            if y_centers is None:
                continue
        else:
            # merged order graph is cyclic but may still be metrically feasible
            y_centers = {}

        boxes: dict[str, BoundingBox] = {}
        for eid in entity_ids:
            w, h = widths[eid], heights[eid]
            cx = x_centers.get(eid, rng.uniform(w / 2, canvas.width - w / 2))
            cy = y_centers.get(eid) if y_centers else None
            if cy is None:
                cy = rng.uniform(h / 2, canvas.height - h / 2)
            x = min(max(int(round(cx - w / 2)), 0), canvas.width - w)
            y = min(max(int(round(cy - h / 2)), 0), canvas.height - h)
            boxes[eid] = BoundingBox(x, y, w, h)

        candidate = Layout(
            skg_id=skg.id,
            boxes=boxes,
            canvas=canvas,
            solver_seed=seed,
            attempts_used=attempt + 1,
        )
        if not verify_layout(candidate, skg):
            return candidate

    logger.debug("layout unsat for %s after %d attempts", skg.id, max_attempts)
    return None


# --- verification ------------------------------------------------------------------


@dataclass(frozen=True)
class LayoutViolation:
    kind: str  # "relation" | "overlap" | "bounds"
    detail: str
    triplet: Triplet | None = None

    def __str__(self) -> str:
        return self.detail


def verify_layout(layout: Layout, skg: SpatialKG) -> list[LayoutViolation]:
    """Re-check every triplet and every pair independently of the solver.

    Empty list means the layout is valid: all boxes in bounds, zero overlap
    area between any pair, and every triplet true under the predicates.
    """
    ids = list(skg.entity_ids())
    if set(layout.boxes) != set(ids):
        raise EntityMismatch(f"layout boxes do not match graph entities for {skg.id}")
    violations: list[LayoutViolation] = []
    for eid in ids:
        if not layout.boxes[eid].within(layout.canvas):
            violations.append(LayoutViolation("bounds", f"{eid} outside canvas"))
    descs = {e.id: e.description for e in skg.entities}
    for trip in skg.triplets:
        if not evaluate(trip.relation, layout.boxes[trip.subject], layout.boxes[trip.object], layout.canvas):
            violations.append(
                LayoutViolation(
                    "relation",
                    f"{descs[trip.subject]} not {trip.relation.canonical_phrase} {descs[trip.object]}",
                    triplet=trip,
                )
            )
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if boxes_overlap(layout.boxes[a], layout.boxes[b]):
                violations.append(LayoutViolation("overlap", f"{descs[a]} overlaps {descs[b]}"))
    return violations


# --- negative object and caption ----------------------------------------------------------


def _word_present(needle: str, haystack: str) -> bool:
    return re.search(rf"\b{re.escape(needle.lower())}\b", haystack.lower()) is not None


def sample_negative(
    scene_objects: Sequence[CatalogObject],
    chosen: SubsetSelection | Sequence[CatalogObject],
    seed: int,
    p_neg: float = 0.5,
    exclude_texts: Sequence[str] = (),
) -> CatalogObject | None:
    """Pick a scene object that is absent from the graph, or nothing.

    Candidates whose label collides (word-wise) with any entity description
    are skipped so that captions can safely mention every entity.
    """
    rng = random.Random(seed)
    if rng.random() >= p_neg:
        return None
    chosen_objects: Iterable[CatalogObject] = getattr(chosen, "chosen", chosen)
    chosen_keys = {(o.label, o.disambiguator) for o in chosen_objects}
    pool = [
        obj
        for obj in scene_objects
        if (obj.label, obj.disambiguator) not in chosen_keys
        and not any(_word_present(obj.display_label, text) for text in exclude_texts)
    ]
    if not pool:
        return None
    return rng.choice(pool)


def build_caption(
    skg: SpatialKG,
    layout: Layout,
    negative: CatalogObject | None,
    backend: "TextGenBackend",
    seed: int = 0,
) -> str:
    """Produce the image caption and enforce its mention contract."""
    caption = backend.gen_caption(skg.scene, skg.entities, skg.triplets, negative, seed)
    lowered = caption.lower()
    for entity in skg.entities:
        if entity.description.lower() not in lowered:
            raise CaptionMissingEntity(f"caption omits {entity.description!r}")
    if negative is not None and _word_present(negative.display_label, caption):
        raise CaptionMentionsNegative(f"caption mentions excluded object {negative.display_label!r}")
    return caption


def make_instance(
    skg: SpatialKG,
    layout: Layout,
    caption: str,
    negative: CatalogObject | None,
) -> SceneInstance:
    return SceneInstance(
        instance_id=stable_id("instance", skg.id, layout.solver_seed),
        skg=skg,
        layout=layout,
        caption=caption,
        negative_object=negative,
    )
