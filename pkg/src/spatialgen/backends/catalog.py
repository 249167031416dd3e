"""Deterministic offline text backend.

Generation reads a bundled scene/object catalog and draws seeded choices;
verification answers from the private render record of the image under
test (or, failing that, from boxes recovered out of the pixels).  With
this backend the whole pipeline runs byte-identically offline.
"""

from __future__ import annotations

import itertools
import json
import logging
import random
from functools import lru_cache
from importlib import resources
from typing import Sequence

from ..builder import select_subset as _select_subset
from ..errors import InsufficientCatalog, TooFewObjects
from ..graphs import CatalogObject, Entity, Scene, SubsetSelection, Triplet
from ..questions import parse_question, phrase_to_relation, pluralize, strip_article
from ..relations import Canvas, Direction, Distance, canonicalize, evaluate
from ..seeds import stable_id
from .base import KnowledgeDoc, TextGenBackend
from .groundtruth import GroundTruthStore, RenderRecord
from .procedural import COLOR_RGB, recover_boxes

logger = logging.getLogger(__name__)

COLOR_NAMES = tuple(COLOR_RGB)
MATERIALS = ("wooden", "metal", "plastic", "glass", "ceramic")

PHRASE_POOLS: dict[object, tuple[str, ...]] = {
    Direction.LEFT_OF: ("to the left of", "left of", "on the left of"),
    Direction.RIGHT_OF: ("to the right of", "right of", "on the right of"),
    Direction.ABOVE: ("above", "over"),
    Direction.BELOW: ("below", "under", "beneath"),
    Direction.IN_FRONT_OF: ("in front of",),
    Direction.BEHIND: ("behind",),
    Distance.NEAR: ("near", "close to", "next to"),
    Distance.FAR: ("far from", "far away from"),
}


@lru_cache(maxsize=1)
def load_scene_catalog() -> dict[str, tuple[str, ...]]:
    text = resources.files("spatialgen.data").joinpath("scene_catalog.json").read_text("utf-8")
    payload = json.loads(text)
    return {entry["name"]: tuple(entry["objects"]) for entry in payload["scenes"]}


def _indefinite(noun_phrase: str) -> str:
    article = "an" if noun_phrase[:1].lower() in "aeiou" else "a"
    return f"{article} {noun_phrase}"


class CatalogTextBackend(TextGenBackend):
    """Seeded draws over bundled data; exact geometric verification."""

    name = "catalog"
    model = "bundled-v1"

    def __init__(
        self,
        canvas: Canvas | None = None,
        ground_truth: GroundTruthStore | None = None,
        catalog: dict[str, tuple[str, ...]] | None = None,
        entity_cap: int = 6,
        split_prob: float = 0.12,
        material_prob: float = 0.2,
        pair_prob: float = 0.6,
        compound_prob: float = 0.25,
        axis_weights: tuple[float, float, float, float] = (0.4, 0.3, 0.15, 0.15),
    ) -> None:
        self.canvas = canvas or Canvas()
        self.ground_truth = ground_truth
        self.catalog = catalog if catalog is not None else load_scene_catalog()
        self.entity_cap = entity_cap
        self.split_prob = split_prob
        self.material_prob = material_prob
        self.pair_prob = pair_prob
        self.compound_prob = compound_prob
        self.axis_weights = axis_weights

    # --- generation -------------------------------------------------------

    def gen_scenes(self, count: int, seed: int) -> list[Scene]:
        if count < 1:
            raise ValueError("count must be at least 1")
        names = sorted(self.catalog)
        if count > len(names):
            raise InsufficientCatalog(f"catalog holds {len(names)} scenes, {count} requested")
        rng = random.Random(seed)
        picked = rng.sample(names, count)
        return [Scene(id=stable_id("scene", name), name=name, source="catalog") for name in picked]

    def gen_objects(self, scene: Scene, knowledge: Sequence[KnowledgeDoc], seed: int) -> list[CatalogObject]:
        labels = self.catalog.get(scene.name)
        if not labels:
            raise TooFewObjects(f"no catalog objects for scene {scene.name!r}")
        return [CatalogObject(scene_id=scene.id, label=label) for label in labels]

    def select_subset(self, objects: Sequence[CatalogObject], seed: int) -> SubsetSelection:
        return _select_subset(objects, seed)

    def enrich_entities(self, selection: SubsetSelection, seed: int) -> list[Entity]:
        rng = random.Random(seed)
        chosen = list(selection.chosen)
        if len(chosen) < self.entity_cap and rng.random() < self.split_prob:
            chosen.append(rng.choice(chosen))  # one object expands into two entities

        positions_by_label: dict[str, list[int]] = {}
        for index, obj in enumerate(chosen):
            positions_by_label.setdefault(obj.display_label, []).append(index)
        colors: dict[int, str] = {}
        for label in sorted(positions_by_label):
            positions = positions_by_label[label]
            for position, color in zip(positions, rng.sample(COLOR_NAMES, len(positions))):
                colors[position] = color

        entities: list[Entity] = []
        for index, obj in enumerate(chosen):
            attributes = {"color": colors[index]}
            parts = [colors[index]]
            if rng.random() < self.material_prob:
                material = rng.choice(MATERIALS)
                attributes["material"] = material
                parts.append(material)
            parts.append(obj.display_label)
            description = _indefinite(" ".join(parts))
            entities.append(
                Entity(
                    id=stable_id(selection.scene_id, description, index),
                    base_object=obj,
                    description=description,
                    attributes=attributes,
                )
            )
        return entities

    def gen_triplets(self, entities: Sequence[Entity], seed: int) -> list[Triplet]:
        """Sample a consistent assignment from one random order per axis.

        The depth order reuses the vertical order (higher on the canvas means
        further back under this package's perspective convention), which keeps
        mixed above/behind chains solvable.
        """
        rng = random.Random(seed)
        ids = [e.id for e in entities]
        x_order = {eid: rank for rank, eid in enumerate(rng.sample(ids, len(ids)))}
        height_order = {eid: rank for rank, eid in enumerate(rng.sample(ids, len(ids)))}

        triplets: list[Triplet] = []
        pairs = list(itertools.combinations(ids, 2))
        emit = [rng.random() < self.pair_prob for _ in pairs]
        if not any(emit):
            emit[rng.randrange(len(pairs))] = True
        for (a, b), wanted in zip(pairs, emit):
            if not wanted:
                continue
            axis = rng.choices(("x", "y", "depth", "distance"), weights=self.axis_weights)[0]
            direction: Direction | None = None
            distance: Distance | None = None
            if axis == "distance":
                distance = Distance.NEAR if rng.random() < 0.5 else Distance.FAR
                subject, obj = (a, b) if rng.random() < 0.5 else (b, a)
            else:
                order = x_order if axis == "x" else height_order
                first, second = (a, b) if order[a] < order[b] else (b, a)
                forward = {
                    "x": Direction.LEFT_OF,
                    "y": Direction.ABOVE,
                    "depth": Direction.BEHIND,
                }[axis]
                if rng.random() < 0.5:
                    subject, obj, direction = first, second, forward
                else:
                    subject, obj, direction = second, first, forward.inverse
                if rng.random() < self.compound_prob:
                    distance = Distance.NEAR if rng.random() < 0.6 else Distance.FAR
            phrase_parts = []
            if direction is not None:
                phrase_parts.append(rng.choice(PHRASE_POOLS[direction]))
            if distance is not None:
                phrase_parts.append(rng.choice(PHRASE_POOLS[distance]))
            relation = canonicalize(", ".join(phrase_parts))
            triplets.append(Triplet(subject=subject, relation=relation, object=obj))
        return triplets

    def gen_caption(
        self,
        scene: Scene | None,
        entities: Sequence[Entity],
        triplets: Sequence[Triplet],
        negative: CatalogObject | None,
        seed: int,
    ) -> str:
        descs = [e.description for e in entities]
        if len(descs) == 1:
            listing = descs[0]
        else:
            listing = ", ".join(descs[:-1]) + " and " + descs[-1]
        head = f"A realistic scene of {_indefinite(scene.name)}" if scene is not None else "A realistic scene"
        by_id = {e.id: strip_article(e.description) for e in entities}
        clauses = [
            f"the {by_id[t.subject]} is {t.relation.sentence_phrase} the {by_id[t.object]}"
            for t in triplets
        ]
        caption = f"{head} with {listing}"
        if clauses:
            caption += ", where " + "; ".join(clauses)
        return caption + "."

    # --- verification --------------------------------------------------------

    def _boxes_for(self, image: bytes, entities: Sequence[Entity]):
        record = self.ground_truth.lookup(image) if self.ground_truth is not None else None
        if record is not None:
            by_id = {e.entity_id: e.box for e in record.entities}
            return {e.id: by_id.get(e.id) for e in entities}, record.canvas
        return recover_boxes(image, entities), self.canvas

    def image_violations(
        self, image: bytes, entities: Sequence[Entity], triplets: Sequence[Triplet]
    ) -> list[str]:
        boxes, canvas = self._boxes_for(image, entities)
        violations: list[str] = []
        for entity in entities:
            if boxes.get(entity.id) is None:
                violations.append(f"missing object: {entity.description}")
        descs = {e.id: e.description for e in entities}
        for trip in triplets:
            a, b = boxes.get(trip.subject), boxes.get(trip.object)
            if a is None or b is None:
                continue
            if not evaluate(trip.relation, a, b, canvas):
                violations.append(
                    f"{descs[trip.subject]} not {trip.relation.canonical_phrase} {descs[trip.object]}"
                )
        return violations

    def verify_image(self, image: bytes, entities: Sequence[Entity], triplets: Sequence[Triplet]) -> bool:
        return not self.image_violations(image, entities, triplets)

    def verify_qa(self, image: bytes, question: str, answer: str) -> bool:
        """Judge a QA pair from the image alone (via its private render record)."""
        record = self.ground_truth.lookup(image) if self.ground_truth is not None else None
        if record is None:
            logger.warning("no render record for image under QA verification; rejecting")
            return False
        parsed = parse_question(question)
        if parsed is None:
            logger.warning("unparseable question %r; rejecting", question)
            return False
        answer_norm = answer.strip().rstrip(".").lower()
        if parsed.kind == "existence":
            target = parsed["target"]
            bare = strip_article(target).lower()
            exists = any(
                strip_article(e.description).lower() == bare or e.label.lower() == bare
                for e in record.entities
            )
            return answer_norm == ("yes" if exists else "no")
        if parsed.kind == "count":
            plural = parsed["plural"].lower()
            count = sum(1 for e in record.entities if pluralize(e.label).lower() == plural)
            return answer_norm == str(count)
        if parsed.kind == "color":
            label = parsed["label"].lower()
            values = {
                e.attributes.get("color")
                for e in record.entities
                if e.label.lower() == label and e.attributes.get("color")
            }
            if len(values) != 1:
                return False
            return answer_norm == next(iter(values)).lower()
        if parsed.kind in ("relation_forward", "relation_verify", "relation_which"):
            return self._verify_relation_qa(record, parsed, answer_norm)
        return False

    @staticmethod
    def _verify_relation_qa(record: RenderRecord, parsed, answer_norm: str) -> bool:
        if parsed.kind == "relation_forward":
            a = record.entity_by_description(parsed["a"])
            b = record.entity_by_description(parsed["b"])
            if a is None or b is None:
                return False
            try:
                relation = canonicalize(answer_norm)
            except Exception:
                return False
            return evaluate(relation, a.box, b.box, record.canvas)
        if parsed.kind == "relation_verify":
            a = record.entity_by_description(parsed["a"])
            b = record.entity_by_description(parsed["b"])
            if a is None or b is None:
                return False
            relation = phrase_to_relation(parsed["phrase"])
            truth = evaluate(relation, a.box, b.box, record.canvas)
            return answer_norm == ("yes" if truth else "no")
        # relation_which: the named object must satisfy the relation to the anchor
        b = record.entity_by_description(parsed["b"])
        named = record.entity_by_description(answer_norm)
        if b is None or named is None:
            return False
        relation = phrase_to_relation(parsed["phrase"])
        return evaluate(relation, named.box, b.box, record.canvas)
