"""Question-answer synthesis from grounded graphs.

Answers always come from graph + layout ground truth; no generator ever
invents one.  Open-ended records feed training; single-choice conversions
feed the holdout benchmark, with every option checked against the layout
oracle before an item is emitted.  The image-only filter then re-judges
each record through the backend as defense in depth.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

from .backends.procedural import COLOR_RGB
from .errors import BackendUnavailable, DistractorCollision
from .images import kept_records
from .questions import (
    COLOR_TEMPLATE,
    COUNT_TEMPLATE,
    EXISTENCE_TEMPLATES,
    RELATION_FORWARD_TEMPLATE,
    RELATION_VERIFY_TEMPLATE,
    RELATION_WHICH_TEMPLATE,
    strip_article,
    with_article,
    pluralize,
)
from .relations import Direction, Distance, RelationKind, RelationSpec, canonicalize, classify, evaluate, invert
from .seeds import derive_seed, stable_id

if TYPE_CHECKING:
    from .backends.base import TextGenBackend
    from .layout import SceneInstance

logger = logging.getLogger(__name__)

CAT_EXISTENCE = "entity_existence"
CAT_COUNT = "entity_count"
CAT_ATTRIBUTE = "entity_attribute"
CAT_REL_DIRECTION = "relation_direction"
CAT_REL_DISTANCE = "relation_distance"
CAT_REL_BOTH = "relation_both"

_REL_CATEGORY = {
    RelationKind.DIRECTIONAL: CAT_REL_DIRECTION,
    RelationKind.DISTANCE: CAT_REL_DISTANCE,
    RelationKind.BOTH: CAT_REL_BOTH,
}

OPTION_LABELS = ("A", "B", "C", "D")


@dataclass
class QARecord:
    id: str
    instance_id: str
    image_path: str
    question: str
    answer: str
    category: str
    slice: str | None = None
    verdict: str = "pending"
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "instance_id": self.instance_id,
            "image_path": self.image_path,
            "question": self.question,
            "answer": self.answer,
            "category": self.category,
            "slice": self.slice,
            "verdict": self.verdict,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QARecord":
        return cls(**data)


@dataclass
class ChoiceQuestion:
    id: str
    instance_id: str
    image_path: str
    question: str
    options: tuple[str, ...]  # labeled A.. in order; 4 by default
    answer_key: str
    category: str
    slice: str | None
    entity_count: int
    meta: dict = field(default_factory=dict)

    @property
    def correct_text(self) -> str:
        return self.options[OPTION_LABELS.index(self.answer_key)]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "instance_id": self.instance_id,
            "image_path": self.image_path,
            "question": self.question,
            "options": {label: text for label, text in zip(OPTION_LABELS, self.options)},
            "answer_key": self.answer_key,
            "category": self.category,
            "slice": self.slice,
            "entity_count": self.entity_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChoiceQuestion":
        labels = [label for label in OPTION_LABELS if label in data["options"]]
        options = tuple(data["options"][label] for label in labels)
        return cls(
            id=data["id"],
            instance_id=data["instance_id"],
            image_path=data["image_path"],
            question=data["question"],
            options=options,  # type: ignore[arg-type]
            answer_key=data["answer_key"],
            category=data["category"],
            slice=data.get("slice"),
            entity_count=data["entity_count"],
        )


def primary_image_path(instance: "SceneInstance") -> str:
    kept = kept_records(instance.image_variants)
    if not kept:
        raise ValueError(f"instance {instance.instance_id} has no kept images")
    return kept[0].path


def _record(instance, question, answer, category, slice_=None, meta=None, image_path=None) -> QARecord:
    return QARecord(
        id=stable_id(instance.instance_id, category, question),
        instance_id=instance.instance_id,
        image_path=image_path if image_path is not None else primary_image_path(instance),
        question=question,
        answer=answer,
        category=category,
        slice=slice_,
        meta=meta or {},
    )


# --- generation -----------------------------------------------------------------


def gen_entity_qa(instance: "SceneInstance", seed: int) -> list[QARecord]:
    """Existence, count, and attribute questions from the entity set."""
    rng = random.Random(seed)
    image_path = primary_image_path(instance)
    records: list[QARecord] = []

    for entity in instance.skg.entities:
        template = EXISTENCE_TEMPLATES[rng.randrange(len(EXISTENCE_TEMPLATES))]
        question = template.format(target=entity.description)
        records.append(
            _record(
                instance, question, "Yes", CAT_EXISTENCE,
                meta={"target": entity.description}, image_path=image_path,
            )
        )

    negative = instance.negative_object
    if negative is not None:
        template = EXISTENCE_TEMPLATES[rng.randrange(len(EXISTENCE_TEMPLATES))]
        question = template.format(target=with_article(negative.display_label))
        records.append(
            _record(
                instance, question, "No", CAT_EXISTENCE,
                meta={"target": with_article(negative.display_label)}, image_path=image_path,
            )
        )

    counts: dict[str, int] = {}
    for entity in instance.skg.entities:
        counts[entity.base_object.display_label] = counts.get(entity.base_object.display_label, 0) + 1
    for label in sorted(counts):
        question = COUNT_TEMPLATE.format(plural=pluralize(label))
        records.append(
            _record(
                instance, question, str(counts[label]), CAT_COUNT,
                meta={"label": label}, image_path=image_path,
            )
        )

    for label in sorted(counts):
        values = {
            e.attributes.get("color")
            for e in instance.skg.entities
            if e.base_object.display_label == label
        }
        if len(values) != 1 or None in values:
            continue  # ambiguous or unattributed: skip rather than guess
        question = COLOR_TEMPLATE.format(label=label)
        records.append(
            _record(
                instance, question, next(iter(values)), CAT_ATTRIBUTE,
                meta={"label": label}, image_path=image_path,
            )
        )
    return records


def _negate_relation(rel: RelationSpec) -> RelationSpec:
    """A relation guaranteed false wherever ``rel`` is true on the same pair."""
    if rel.direction is not None:
        return invert(rel)  # antisymmetry makes the flipped direction false
    assert rel.distance is not None
    return RelationSpec.of(distance=rel.distance.opposite)  # near/far never co-hold


def gen_relation_qa(instance: "SceneInstance", seed: int) -> list[QARecord]:
    """One question per triplet: forward, which-object, or yes/no verification."""
    rng = random.Random(seed)
    image_path = primary_image_path(instance)
    layout = instance.layout
    descs = {e.id: e.description for e in instance.skg.entities}
    records: list[QARecord] = []

    for trip in instance.skg.triplets:
        kind = classify(trip.relation)
        category = _REL_CATEGORY[kind]
        slice_ = kind.value
        subject_bare = strip_article(descs[trip.subject])
        object_bare = strip_article(descs[trip.object])
        meta = {
            "subject_id": trip.subject,
            "object_id": trip.object,
            "relation": trip.relation.to_dict(),
        }

        forms = ["forward", "verify"]
        satisfiers = [
            eid
            for eid in layout.boxes
            if eid != trip.object
            and evaluate(trip.relation, layout.boxes[eid], layout.boxes[trip.object], layout.canvas)
        ]
        if satisfiers == [trip.subject]:
            forms.append("which")
        form = rng.choice(forms)

        if form == "forward":
            question = RELATION_FORWARD_TEMPLATE.format(a=subject_bare, b=object_bare)
            records.append(
                _record(instance, question, trip.relation.canonical_phrase, category, slice_, meta, image_path)
            )
        elif form == "which":
            question = RELATION_WHICH_TEMPLATE.format(phrase=trip.relation.sentence_phrase, b=object_bare)
            records.append(
                _record(instance, question, descs[trip.subject], category, slice_, {**meta, "form": "which"}, image_path)
            )
        else:
            question = RELATION_VERIFY_TEMPLATE.format(
                a=subject_bare, phrase=trip.relation.sentence_phrase, b=object_bare
            )
            records.append(
                _record(instance, question, "Yes", category, slice_, {**meta, "form": "verify"}, image_path)
            )
            if rng.random() < 0.5:
                negated = _negate_relation(trip.relation)
                neg_question = RELATION_VERIFY_TEMPLATE.format(
                    a=subject_bare, phrase=negated.sentence_phrase, b=object_bare
                )
                neg_meta = {**meta, "relation": negated.to_dict(), "form": "verify"}
                records.append(
                    _record(instance, neg_question, "No", category, slice_, neg_meta, image_path)
                )
    return records


# --- ground-truth oracle ---------------------------------------------------------


def option_is_correct(category: str, meta: dict, question: str, option: str, instance: "SceneInstance") -> bool:
    """Evaluate one option text against the instance's layout/graph ground truth."""
    layout = instance.layout
    option_norm = option.strip().rstrip(".").lower()
    if category == CAT_EXISTENCE:
        target = strip_article(meta["target"]).lower()
        exists = any(
            strip_article(e.description).lower() == target or e.base_object.display_label.lower() == target
            for e in instance.skg.entities
        )
        if option_norm == "yes":
            return exists
        if option_norm == "no":
            return not exists
        return False  # "cannot be determined" and object claims are always wrong
    if category == CAT_COUNT:
        label = meta["label"]
        count = sum(1 for e in instance.skg.entities if e.base_object.display_label == label)
        return option_norm == str(count)
    if category == CAT_ATTRIBUTE:
        label = meta["label"]
        values = {
            e.attributes.get("color")
            for e in instance.skg.entities
            if e.base_object.display_label == label
        }
        return len(values) == 1 and option_norm == next(iter(values)).lower()
    # relation categories
    subject_id, object_id = meta["subject_id"], meta["object_id"]
    if meta.get("form") == "verify":
        relation = RelationSpec.from_dict(meta["relation"])
        truth = evaluate(relation, layout.boxes[subject_id], layout.boxes[object_id], layout.canvas)
        if option_norm == "yes":
            return truth
        if option_norm == "no":
            return not truth
        return False
    if meta.get("form") == "which":
        relation = RelationSpec.from_dict(meta["relation"])
        named = next(
            (e for e in instance.skg.entities if strip_article(e.description).lower() == strip_article(option).lower()),
            None,
        )
        if named is None:
            return False
        return evaluate(relation, layout.boxes[named.id], layout.boxes[object_id], layout.canvas)
    # forward: the option is itself a relation phrase
    try:
        relation = canonicalize(option_norm)
    except Exception:
        return False
    return evaluate(relation, layout.boxes[subject_id], layout.boxes[object_id], layout.canvas)


# --- single-choice conversion -------------------------------------------------------


def _relation_phrase_distractors(qa: QARecord, instance: "SceneInstance", rng: random.Random) -> list[str]:
    """Three relation phrases that are false on the layout for this pair."""
    relation = RelationSpec.from_dict(qa.meta["relation"])
    candidates: list[RelationSpec] = [_negate_relation(relation)]
    if relation.direction is not None:
        orthogonal = [d for d in Direction if d.axis != relation.direction.axis]
    else:
        orthogonal = list(Direction)
    rng.shuffle(orthogonal)
    candidates.extend(RelationSpec.of(direction=d) for d in orthogonal)
    if relation.distance is None:
        candidates.append(RelationSpec.of(distance=Distance.NEAR))
        candidates.append(RelationSpec.of(distance=Distance.FAR))
    else:
        candidates.append(RelationSpec.of(distance=relation.distance.opposite))
    phrases: list[str] = []
    for spec in candidates:
        phrase = spec.canonical_phrase
        if phrase == qa.answer or phrase in phrases:
            continue
        if option_is_correct(qa.category, qa.meta, qa.question, phrase, instance):
            continue  # a distractor must be false on the layout
        phrases.append(phrase)
        if len(phrases) == 3:
            break
    return phrases


def _absent_labels(instance: "SceneInstance", rng: random.Random, scene_objects: Sequence[str] = ()) -> list[str]:
    present = {e.base_object.display_label for e in instance.skg.entities}
    pool = [label for label in scene_objects if label not in present]
    if instance.negative_object is not None and instance.negative_object.display_label not in present:
        pool.append(instance.negative_object.display_label)
    pool = sorted(set(pool))
    rng.shuffle(pool)
    return pool


def make_choice(
    qa: QARecord,
    instance: "SceneInstance",
    seed: int,
    scene_objects: Sequence[str] = (),
    n_options: int = 4,
) -> ChoiceQuestion:
    """Convert one kept record into a single-choice item (4 options by
    default, 2 for a yes/no style benchmark).

    Every option is checked against the layout oracle; exactly one may be
    true.  When enough suitably-false distinct options cannot be assembled
    the item is skipped via DistractorCollision.
    """
    if not 2 <= n_options <= len(OPTION_LABELS):
        raise ValueError(f"n_options must be 2..{len(OPTION_LABELS)}")
    rng = random.Random(derive_seed(seed, "choice", qa.id))
    correct = qa.answer
    options: list[str] = [correct]

    if qa.category in (CAT_REL_DIRECTION, CAT_REL_DISTANCE, CAT_REL_BOTH) and qa.meta.get("form") is None:
        options.extend(_relation_phrase_distractors(qa, instance, rng))
    elif qa.meta.get("form") == "which":
        relation = RelationSpec.from_dict(qa.meta["relation"])
        object_id = qa.meta["object_id"]
        false_entities = [
            e.description
            for e in instance.skg.entities
            if e.description != correct
            and not evaluate(relation, instance.layout.boxes[e.id], instance.layout.boxes[object_id], instance.layout.canvas)
        ]
        rng.shuffle(false_entities)
        options.extend(false_entities[:3])
        for label in _absent_labels(instance, rng, scene_objects):
            if len(options) >= 4:
                break
            options.append(with_article(label))
    elif qa.category == CAT_EXISTENCE or qa.meta.get("form") == "verify":
        other = "No" if correct == "Yes" else "Yes"
        absent = _absent_labels(instance, rng, scene_objects)
        claim_label = absent[0] if absent else "painted unicorn"
        options.extend([other, "Cannot be determined", f"No, but there is {with_article(claim_label)} instead"])
    elif qa.category == CAT_COUNT:
        count = int(correct)
        options.extend(str(v) for v in (max(0, count - 1), count + 1, count + 3))
    elif qa.category == CAT_ATTRIBUTE:
        palette = [c for c in COLOR_RGB if c != correct.lower()]
        rng.shuffle(palette)
        options.extend(palette[:3])
    else:
        raise DistractorCollision(f"no distractor recipe for category {qa.category}")

    options = list(dict.fromkeys(options))
    if len(options) < n_options:
        raise DistractorCollision(f"only {len(options)} distinct options for {qa.id}")
    options = options[:n_options]

    verdicts = [option_is_correct(qa.category, qa.meta, qa.question, option, instance) for option in options]
    if verdicts.count(True) != 1 or not verdicts[0]:
        raise DistractorCollision(f"options for {qa.id} are not exactly-one-correct")

    rng.shuffle(options)
    answer_key = OPTION_LABELS[options.index(correct)]
    return ChoiceQuestion(
        id=stable_id("choice", qa.id),
        instance_id=qa.instance_id,
        image_path=qa.image_path,
        question=qa.question,
        options=tuple(options),  # type: ignore[arg-type]
        answer_key=answer_key,
        category=qa.category,
        slice=qa.slice,
        entity_count=instance.entity_count,
        meta=qa.meta,
    )


# --- filtering ------------------------------------------------------------------


def filter_qa(
    records: Sequence[QARecord],
    instance: "SceneInstance",
    backend: "TextGenBackend",
) -> list[QARecord]:
    """Judge each record from the image alone; the graph is withheld."""
    updated: list[QARecord] = []
    for record in records:
        path = Path(record.image_path)
        if not path.exists():
            record.verdict = "discarded"
            updated.append(record)
            continue
        image = path.read_bytes()
        try:
            keep = backend.verify_qa(image, record.question, record.answer)
        except BackendUnavailable as exc:
            logger.warning("qa filter unavailable for %s: %s", record.id, exc)
            record.verdict = "pending"
            updated.append(record)
            continue
        record.verdict = "kept" if keep else "discarded"
        updated.append(record)
    return updated


def kept_qa(records: Sequence[QARecord]) -> list[QARecord]:
    return [r for r in records if r.verdict == "kept"]
