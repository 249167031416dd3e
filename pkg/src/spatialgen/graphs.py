"""Spatial knowledge graph data model, validation, and corpus statistics.

A graph holds one scene, an ordered list of attributed single-object
entities (the nodes), and pairwise spatial-relation triplets (the edges).
Everything is immutable after construction and safe to share across
pipeline workers.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import (
    DanglingEndpoint,
    DuplicateEntityId,
    DuplicatePair,
    EmptyCorpus,
    SelfRelation,
    TooFewEntities,
)
from .relations import RelationSpec


@dataclass(frozen=True)
class Scene:
    id: str
    name: str
    source: str = "catalog"  # "catalog" or "llm"

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("scene name must be non-empty")
        if self.source not in ("catalog", "llm"):
            raise ValueError(f"unknown scene source {self.source!r}")

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "source": self.source}

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        return cls(id=data["id"], name=data["name"], source=data["source"])


@dataclass(frozen=True)
class CatalogObject:
    """An object that may plausibly appear in a scene, e.g. "balloon"."""

    scene_id: str
    label: str
    disambiguator: str | None = None

    def __post_init__(self) -> None:
        if not self.label:
            raise ValueError("object label must be non-empty")

    @property
    def display_label(self) -> str:
        return f"{self.disambiguator} {self.label}" if self.disambiguator else self.label

    def to_dict(self) -> dict:
        return {"scene_id": self.scene_id, "label": self.label, "disambiguator": self.disambiguator}

    @classmethod
    def from_dict(cls, data: dict) -> "CatalogObject":
        return cls(scene_id=data["scene_id"], label=data["label"], disambiguator=data.get("disambiguator"))


@dataclass(frozen=True)
class Entity:
    """One attributed physical object with quantity exactly one."""

    id: str
    base_object: CatalogObject
    description: str
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.description:
            raise ValueError("entity description must be non-empty")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "base_object": self.base_object.to_dict(),
            "description": self.description,
            "attributes": dict(self.attributes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Entity":
        return cls(
            id=data["id"],
            base_object=CatalogObject.from_dict(data["base_object"]),
            description=data["description"],
            attributes=dict(data.get("attributes", {})),
        )


@dataclass(frozen=True)
class Triplet:
    subject: str
    relation: RelationSpec
    object: str

    def to_dict(self) -> dict:
        return {"subject": self.subject, "relation": self.relation.to_dict(), "object": self.object}

    @classmethod
    def from_dict(cls, data: dict) -> "Triplet":
        return cls(
            subject=data["subject"],
            relation=RelationSpec.from_dict(data["relation"]),
            object=data["object"],
        )


@dataclass(frozen=True)
class SubsetSelection:
    """The multiset of catalog objects chosen for one graph (repeats allowed)."""

    scene_id: str
    chosen: tuple[CatalogObject, ...]

    def __post_init__(self) -> None:
        if not 2 <= len(self.chosen) <= 4:
            raise ValueError(f"subset size must be 2..4, got {len(self.chosen)}")

    @property
    def k(self) -> int:
        return len(self.chosen)


@dataclass(frozen=True)
class SpatialKG:
    """A validated spatial knowledge graph; construct via :func:`new_skg`."""

    id: str
    scene: Scene
    entities: tuple[Entity, ...]
    triplets: tuple[Triplet, ...]
    provenance_seed: int

    def entity_ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.entities)

    def entity_by_id(self, entity_id: str) -> Entity:
        for entity in self.entities:
            if entity.id == entity_id:
                return entity
        raise KeyError(entity_id)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "scene": self.scene.to_dict(),
            "entities": [e.to_dict() for e in self.entities],
            "triplets": [t.to_dict() for t in self.triplets],
            "provenance_seed": self.provenance_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SpatialKG":
        return cls(
            id=data["id"],
            scene=Scene.from_dict(data["scene"]),
            entities=tuple(Entity.from_dict(e) for e in data["entities"]),
            triplets=tuple(Triplet.from_dict(t) for t in data["triplets"]),
            provenance_seed=data["provenance_seed"],
        )


def validate_triplets(entity_ids: Sequence[str], triplets: Iterable[Triplet]) -> None:
    """Structural triplet checks shared by graph construction and the builder."""
    known = set(entity_ids)
    seen_pairs: set[frozenset[str]] = set()
    for trip in triplets:
        if trip.subject == trip.object:
            raise SelfRelation(f"triplet relates {trip.subject} to itself")
        if trip.subject not in known or trip.object not in known:
            raise DanglingEndpoint(f"triplet ({trip.subject}, {trip.object}) references unknown entity")
        pair = frozenset((trip.subject, trip.object))
        if pair in seen_pairs:
            raise DuplicatePair(f"more than one triplet on pair {sorted(pair)}")
        seen_pairs.add(pair)


def new_skg(
    scene: Scene,
    entities: Sequence[Entity],
    triplets: Sequence[Triplet],
    seed: int,
    skg_id: str | None = None,
) -> SpatialKG:
    """Validate and freeze a spatial knowledge graph.

    Enforces: at least two entities, unique entity ids, no self-relations,
    no dangling endpoints, and at most one triplet per unordered pair.
    """
    if len(entities) < 2:
        raise TooFewEntities(f"graph needs at least 2 entities, got {len(entities)}")
    ids = [e.id for e in entities]
    if len(set(ids)) != len(ids):
        raise DuplicateEntityId("entity ids must be unique within a graph")
    validate_triplets(ids, triplets)
    if skg_id is None:
        from .seeds import stable_id

        skg_id = stable_id("skg", scene.id, seed, *ids)
    return SpatialKG(
        id=skg_id,
        scene=scene,
        entities=tuple(entities),
        triplets=tuple(triplets),
        provenance_seed=seed,
    )


@dataclass(frozen=True)
class DistributionReport:
    """Corpus-level frequency report over object labels and relation phrases.

    Relation usage is counted two ways: by raw surface phrase as generated,
    and by canonical form, since a compound relation can be read as one
    phrase or as its parts depending on the convention.
    """

    skg_count: int
    node_count: int
    triplet_count: int
    object_counts: dict[str, int]
    relation_counts: dict[str, int]
    canonical_relation_counts: dict[str, int]

    @property
    def unique_object_count(self) -> int:
        return len(self.object_counts)

    @property
    def unique_relation_count(self) -> int:
        return len(self.relation_counts)

    def top_objects(self, k: int = 15) -> list[tuple[str, int]]:
        return _top_k(self.object_counts, k)

    def top_relations(self, k: int = 15) -> list[tuple[str, int]]:
        return _top_k(self.relation_counts, k)

    def top_canonical_relations(self, k: int = 15) -> list[tuple[str, int]]:
        return _top_k(self.canonical_relation_counts, k)

    def to_dict(self) -> dict:
        return {
            "skg_count": self.skg_count,
            "node_count": self.node_count,
            "triplet_count": self.triplet_count,
            "unique_object_count": self.unique_object_count,
            "unique_relation_count": self.unique_relation_count,
            "object_counts": dict(sorted(self.object_counts.items())),
            "relation_counts": dict(sorted(self.relation_counts.items())),
            "canonical_relation_counts": dict(sorted(self.canonical_relation_counts.items())),
        }


def _top_k(counts: Mapping[str, int], k: int) -> list[tuple[str, int]]:
    # descending by count, lexicographic tie-break for reproducible tables
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


def corpus_stats(skgs: Sequence[SpatialKG]) -> DistributionReport:
    """Aggregate object-label and relation-phrase frequencies over a corpus."""
    if not skgs:
        raise EmptyCorpus("cannot report statistics over an empty corpus")
    objects: Counter[str] = Counter()
    relations: Counter[str] = Counter()
    canonical: Counter[str] = Counter()
    node_count = 0
    triplet_count = 0
    for skg in skgs:
        node_count += len(skg.entities)
        triplet_count += len(skg.triplets)
        for entity in skg.entities:
            objects[entity.base_object.display_label] += 1
        for trip in skg.triplets:
            relations[trip.relation.surface_phrase.lower()] += 1
            canonical[trip.relation.canonical_phrase] += 1
    return DistributionReport(
        skg_count=len(skgs),
        node_count=node_count,
        triplet_count=triplet_count,
        object_counts=dict(objects),
        relation_counts=dict(relations),
        canonical_relation_counts=dict(canonical),
    )
