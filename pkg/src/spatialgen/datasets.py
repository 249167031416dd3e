"""Dataset emission: training conversations, holdout benchmark, ablation
subsets, and distribution reports.  Single source of truth for file formats
(documented with examples in docs/formats.md).
"""

from __future__ import annotations

import json
import logging
import random
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .errors import ContaminationDetected, InsufficientItems, MissingImage, WriteFailure
from .graphs import DistributionReport, SpatialKG, corpus_stats
from .qa import ChoiceQuestion, QARecord

logger = logging.getLogger(__name__)

IMAGE_TOKEN = "<image>"


@dataclass
class TrainingItem:
    """One instruction-tuning conversation grounded on one image."""

    id: str
    instance_id: str
    image: str  # path relative to the dataset root
    conversation: list[dict]  # [{"role": "user"|"assistant", "text": ...}, ...]
    category: str
    slice: str | None
    entity_count: int

    def __post_init__(self) -> None:
        if not self.conversation or self.conversation[0]["role"] != "user":
            raise ValueError("conversation must start with a user turn")
        if not self.conversation[0]["text"].startswith(IMAGE_TOKEN):
            raise ValueError("first user turn must start with the image placeholder")
        for index, turn in enumerate(self.conversation):
            expected = "user" if index % 2 == 0 else "assistant"
            if turn["role"] != expected:
                raise ValueError("conversation roles must alternate starting with user")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "instance_id": self.instance_id,
            "image": self.image,
            "conversation": self.conversation,
            "metadata": {
                "category": self.category,
                "slice": self.slice,
                "entity_count": self.entity_count,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingItem":
        meta = data["metadata"]
        return cls(
            id=data["id"],
            instance_id=data["instance_id"],
            image=data["image"],
            conversation=data["conversation"],
            category=meta["category"],
            slice=meta.get("slice"),
            entity_count=meta["entity_count"],
        )


def training_item_from_record(record: QARecord, entity_count: int, image_rel: str) -> TrainingItem:
    return TrainingItem(
        id=record.id,
        instance_id=record.instance_id,
        image=image_rel,
        conversation=[
            {"role": "user", "text": f"{IMAGE_TOKEN}\n{record.question}"},
            {"role": "assistant", "text": record.answer},
        ],
        category=record.category,
        slice=record.slice,
        entity_count=entity_count,
    )


@dataclass
class HoldoutItem:
    """One single-choice benchmark question."""

    id: str
    instance_id: str
    image: str
    question: str
    options: dict[str, str]
    answer_key: str
    category: str
    slice: str | None
    entity_count: int

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "instance_id": self.instance_id,
            "image": self.image,
            "question": self.question,
            "options": self.options,
            "answer_key": self.answer_key,
            "category": self.category,
            "slice": self.slice,
            "entity_count": self.entity_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HoldoutItem":
        return cls(
            id=data["id"],
            instance_id=data["instance_id"],
            image=data["image"],
            question=data["question"],
            options=dict(data["options"]),
            answer_key=data["answer_key"],
            category=data["category"],
            slice=data.get("slice"),
            entity_count=data["entity_count"],
        )


def holdout_item_from_choice(choice: ChoiceQuestion, image_rel: str) -> HoldoutItem:
    return HoldoutItem(
        id=choice.id,
        instance_id=choice.instance_id,
        image=image_rel,
        question=choice.question,
        options={label: text for label, text in zip("ABCD", choice.options)},
        answer_key=choice.answer_key,
        category=choice.category,
        slice=choice.slice,
        entity_count=choice.entity_count,
    )


# --- emission --------------------------------------------------------------------


def _count_by(items: Sequence, attribute: str) -> dict[str, int]:
    counts: dict[str, int] = {}
    for item in items:
        key = getattr(item, attribute) or "none"
        counts[key] = counts.get(key, 0) + 1
    return dict(sorted(counts.items()))


def _copy_images(
    pairs: Sequence[tuple[Path, str]], out_dir: Path
) -> int:
    copied = 0
    for source, rel in pairs:
        if not source.exists():
            raise MissingImage(f"referenced image missing: {source}")
        target = out_dir / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        if not target.exists():
            try:
                shutil.copyfile(source, target)
            except OSError as exc:
                raise WriteFailure(f"copying {source} -> {target}: {exc}") from exc
            copied += 1
    return copied


def emit_training(
    items: Sequence[TrainingItem],
    out_dir: Path,
    image_sources: dict[str, Path],
    manifest_extra: dict | None = None,
) -> dict:
    """Write train.json plus its images and manifest; returns the manifest."""
    out_dir.mkdir(parents=True, exist_ok=True)
    ordered = sorted(items, key=lambda item: item.id)
    pairs = []
    for item in ordered:
        source = image_sources.get(item.image)
        if source is None:
            raise MissingImage(f"no source registered for {item.image}")
        pairs.append((source, item.image))
    _copy_images(pairs, out_dir)
    payload = [item.to_dict() for item in ordered]
    (out_dir / "train.json").write_text(json.dumps(payload, indent=1), encoding="utf-8")
    manifest = {
        "dataset": "training",
        "items": len(ordered),
        "images": len({item.image for item in ordered}),
        "instances": len({item.instance_id for item in ordered}),
        "by_category": _count_by(ordered, "category"),
        "by_slice": _count_by(ordered, "slice"),
        "instance_ids": sorted({item.instance_id for item in ordered}),
    }
    manifest.update(manifest_extra or {})
    (out_dir / "train_manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return manifest


def emit_holdout(
    items: Sequence[HoldoutItem],
    out_dir: Path,
    image_sources: dict[str, Path],
    training_manifest: dict | None = None,
    manifest_extra: dict | None = None,
) -> dict:
    """Write holdout.json plus images; refuses any instance overlap with training."""
    out_dir.mkdir(parents=True, exist_ok=True)
    ordered = sorted(items, key=lambda item: item.id)
    holdout_instances = {item.instance_id for item in ordered}
    if training_manifest is not None:
        overlap = holdout_instances & set(training_manifest.get("instance_ids", []))
        if overlap:
            raise ContaminationDetected(f"instances shared with training: {sorted(overlap)[:5]}")
    pairs = []
    seen_rel: set[str] = set()
    for item in ordered:
        source = image_sources.get(item.image)
        if source is None:
            raise MissingImage(f"no source registered for {item.image}")
        if item.image not in seen_rel:
            pairs.append((source, item.image))
            seen_rel.add(item.image)
    # every kept variant of a holdout instance ships with the benchmark
    extra = [
        (source, rel)
        for rel, source in sorted(image_sources.items())
        if rel not in seen_rel and rel.split("/")[-2] in holdout_instances
    ]
    _copy_images(pairs + extra, out_dir)
    image_count = len({rel for _, rel in pairs + extra})
    payload = [item.to_dict() for item in ordered]
    (out_dir / "holdout.json").write_text(json.dumps(payload, indent=1), encoding="utf-8")
    manifest = {
        "dataset": "holdout",
        "questions": len(ordered),
        "images": image_count,
        "instances": len(holdout_instances),
        "by_category": _count_by(ordered, "category"),
        "by_slice": _count_by(ordered, "slice"),
        "instance_ids": sorted(holdout_instances),
    }
    manifest.update(manifest_extra or {})
    (out_dir / "holdout_manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return manifest


# --- ablation subsets ------------------------------------------------------------


FILTERS: dict[str, Callable] = {
    "directional-only": lambda item: item.slice == "directional",
    "distance-only": lambda item: item.slice == "distance",
    "min-entities-3": lambda item: item.entity_count >= 3,
    "max-entities-2": lambda item: item.entity_count < 3,
}


def sample_subset(
    items: Sequence,
    size: int,
    seed: int,
    predicate: Callable | str | None = None,
):
    """Uniform sample without replacement over (optionally filtered) items."""
    if isinstance(predicate, str):
        predicate = FILTERS[predicate]
    pool = [item for item in items if predicate(item)] if predicate else list(items)
    if size > len(pool):
        raise InsufficientItems(f"requested {size} items from a pool of {len(pool)}")
    rng = random.Random(seed)
    return rng.sample(pool, size)


# --- reporting -------------------------------------------------------------------


def report(corpus: Sequence[SpatialKG]) -> DistributionReport:
    return corpus_stats(corpus)


def top_table_csv(rows: Sequence[tuple[str, int]]) -> str:
    lines = ["rank,label,count"]
    for rank, (label, count) in enumerate(rows, start=1):
        escaped = f'"{label}"' if "," in label else label
        lines.append(f"{rank},{escaped},{count}")
    return "\n".join(lines) + "\n"


def report_text(stats: DistributionReport, k: int = 15) -> str:
    lines = [
        f"graphs: {stats.skg_count}  nodes: {stats.node_count}  triplets: {stats.triplet_count}",
        f"unique objects: {stats.unique_object_count}  unique relation phrases: {stats.unique_relation_count}",
        "",
        f"top {k} objects:",
    ]
    for rank, (label, count) in enumerate(stats.top_objects(k), start=1):
        lines.append(f"  {rank:>2}. {label:<28} {count}")
    lines.append("")
    lines.append(f"top {k} relation phrases:")
    for rank, (label, count) in enumerate(stats.top_relations(k), start=1):
        lines.append(f"  {rank:>2}. {label:<28} {count}")
    return "\n".join(lines) + "\n"
