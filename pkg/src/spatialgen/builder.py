"""Scene-to-graph construction: subset selection, enrichment, triplet gating.

The builder owns validation; the actual content (entity attributes, relation
choices) comes from the text backend.  Inconsistent backend output is
regenerated a few times and then the graph is discarded, never repaired.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

from .errors import (
    DuplicateDescription,
    EntityCapExceeded,
    InconsistentTriplets,
    SpatialGenError,
    TooFewObjects,
)
from .graphs import CatalogObject, Entity, SpatialKG, SubsetSelection, Triplet, new_skg, validate_triplets
from .relations import check_consistency
from .seeds import derive_seed

if TYPE_CHECKING:
    from .backends.base import KnowledgeFetcher, TextGenBackend

logger = logging.getLogger(__name__)

TRIPLET_REGEN_ATTEMPTS = 3  # regenerations after the first inconsistent draw


@dataclass(frozen=True)
class BuilderConfig:
    scenes: int = 160
    skgs_per_scene: int = 25
    min_objects_per_scene: int = 5
    entity_cap: int = 6
    master_seed: int = 0

    def __post_init__(self) -> None:
        if min(self.scenes, self.skgs_per_scene, self.min_objects_per_scene) < 1:
            raise ValueError("all builder counts must be at least 1")
        if self.entity_cap < 4:
            raise ValueError("entity_cap must be at least 4")


def select_subset(objects: Sequence[CatalogObject], seed: int) -> SubsetSelection:
    """Choose 2-4 objects, repeats allowed, weighted toward catalog rank.

    Catalog order is the commonality proxy: earlier objects are likelier.
    """
    if len(objects) < 2:
        raise TooFewObjects(f"need at least 2 candidate objects, got {len(objects)}")
    rng = random.Random(seed)
    k = rng.choice((2, 3, 4))
    weights = [1.0 / (rank + 1) for rank in range(len(objects))]
    chosen = tuple(rng.choices(list(objects), weights=weights, k=k))
    return SubsetSelection(scene_id=objects[0].scene_id, chosen=chosen)


def enrich_entities(
    selection: SubsetSelection,
    backend: "TextGenBackend",
    seed: int,
    entity_cap: int = 6,
) -> list[Entity]:
    """Expand each chosen object into one-or-more attributed single entities."""
    entities = backend.enrich_entities(selection, seed)
    if len(entities) < selection.k:
        raise SpatialGenError(
            f"enrichment shrank the selection: {len(entities)} entities from k={selection.k}"
        )
    if len(entities) > entity_cap:
        raise EntityCapExceeded(f"{len(entities)} entities exceeds cap {entity_cap}")
    descriptions = [e.description for e in entities]
    if len(set(descriptions)) != len(descriptions):
        raise DuplicateDescription("entity descriptions must be unique within a graph")
    return entities


def gen_triplets(entities: Sequence[Entity], backend: "TextGenBackend", seed: int) -> list[Triplet]:
    """Draw a relation assignment and gate it on the consistency check."""
    entity_ids = [e.id for e in entities]
    last_error: Exception | None = None
    for attempt in range(1 + TRIPLET_REGEN_ATTEMPTS):
        triplets = backend.gen_triplets(entities, derive_seed(seed, "try", attempt))
        validate_triplets(entity_ids, triplets)
        report = check_consistency(triplets)
        if report.ok:
            return list(triplets)
        last_error = InconsistentTriplets(
            f"cycle on axis {report.axis} after attempt {attempt + 1}"
        )
        logger.debug("regenerating triplets: %s", last_error)
    raise last_error  # type: ignore[misc]


@dataclass(frozen=True)
class BuildFailure:
    stage: str
    scene: str
    reason: str

    def to_dict(self) -> dict:
        return {"stage": self.stage, "scene": self.scene, "reason": self.reason}


def build_skg_batch(
    config: BuilderConfig,
    backend: "TextGenBackend",
    knowledge: "KnowledgeFetcher | None" = None,
    scenes: "Sequence | None" = None,
    objects_out: dict | None = None,
) -> tuple[list[SpatialKG], list[BuildFailure]]:
    """Run scenes -> objects -> subset -> entities -> triplets for a whole corpus.

    One failing graph is logged and skipped; the batch never aborts.
    ``scenes`` lets a caller reuse an already-generated scene list (seed
    derivation is identical either way); ``objects_out`` captures each
    scene's object list for downstream stages.
    """
    skgs: list[SpatialKG] = []
    failures: list[BuildFailure] = []
    if scenes is None:
        scenes = backend.gen_scenes(config.scenes, derive_seed(config.master_seed, "scenes"))
    for scene_index, scene in enumerate(scenes):
        docs = knowledge.fetch(scene) if knowledge is not None else []
        try:
            objects = backend.gen_objects(scene, docs, derive_seed(config.master_seed, "objects", scene_index))
        except SpatialGenError as exc:
            failures.append(BuildFailure(stage="objects", scene=scene.name, reason=str(exc)))
            continue
        if len(objects) < config.min_objects_per_scene:
            failures.append(
                BuildFailure(stage="objects", scene=scene.name, reason=f"only {len(objects)} objects")
            )
            continue
        if objects_out is not None:
            objects_out[scene.id] = list(objects)
        for skg_index in range(config.skgs_per_scene):
            skg_seed = derive_seed(config.master_seed, scene_index, skg_index)
            try:
                selection = select_subset(objects, derive_seed(skg_seed, "subset"))
                entities = enrich_entities(
                    selection, backend, derive_seed(skg_seed, "enrich"), entity_cap=config.entity_cap
                )
                triplets = gen_triplets(entities, backend, derive_seed(skg_seed, "triplets"))
                skgs.append(new_skg(scene, entities, triplets, seed=skg_seed))
            except SpatialGenError as exc:
                failures.append(
                    BuildFailure(stage=type(exc).__name__, scene=scene.name, reason=str(exc))
                )
                logger.info("skipping graph %s/%d: %s", scene.name, skg_index, exc)
    return skgs, failures
