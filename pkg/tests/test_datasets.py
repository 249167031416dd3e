from __future__ import annotations

import json
from pathlib import Path

import pytest

from spatialgen.datasets import (
    FILTERS,
    HoldoutItem,
    TrainingItem,
    emit_holdout,
    emit_training,
    holdout_item_from_choice,
    report_text,
    sample_subset,
    top_table_csv,
    training_item_from_record,
)
from spatialgen.errors import ContaminationDetected, InsufficientItems, MissingImage
from spatialgen.graphs import corpus_stats
from spatialgen.qa import ChoiceQuestion, QARecord


def make_item(i: int, slice_: str | None = None, entity_count: int = 2, instance: str | None = None) -> TrainingItem:
    return TrainingItem(
        id=f"item-{i:05d}",
        instance_id=instance or f"inst-{i % 37}",
        image=f"images/scene/inst-{i % 37}/0.png",
        conversation=[
            {"role": "user", "text": "<image>\nIs there a chair in the image?"},
            {"role": "assistant", "text": "Yes"},
        ],
        category="entity_existence",
        slice=slice_,
        entity_count=entity_count,
    )


def corpus(n: int = 100) -> list[TrainingItem]:
    slices = [None, "directional", "distance", "both"]
    return [make_item(i, slices[i % 4], entity_count=2 + (i % 4)) for i in range(n)]


# --- training items --------------------------------------------------------------


def test_training_item_validation():
    with pytest.raises(ValueError):
        TrainingItem(
            id="x", instance_id="i", image="a.png",
            conversation=[{"role": "user", "text": "no placeholder"}],
            category="entity_existence", slice=None, entity_count=2,
        )
    with pytest.raises(ValueError):
        TrainingItem(
            id="x", instance_id="i", image="a.png",
            conversation=[{"role": "assistant", "text": "<image>\nhello"}],
            category="entity_existence", slice=None, entity_count=2,
        )


def test_training_item_from_record_round_trip():
    record = QARecord(
        id="r1", instance_id="inst", image_path="/work/images/s/inst/0.png",
        question="Is there a chair in the image?", answer="Yes",
        category="entity_existence",
    )
    item = training_item_from_record(record, entity_count=3, image_rel="images/s/inst/0.png")
    assert item.conversation[0]["text"].startswith("<image>\n")
    assert TrainingItem.from_dict(item.to_dict()) == item


# --- emission ---------------------------------------------------------------------


def _fake_image(tmp_path: Path, rel: str) -> Path:
    path = tmp_path / "work" / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"\x89PNG\r\n\x1a\nfake")
    return path


def test_emit_training_writes_dataset(tmp_path: Path):
    items = [make_item(i) for i in range(10)]
    sources = {item.image: _fake_image(tmp_path, item.image) for item in items}
    manifest = emit_training(items, tmp_path / "dataset", sources)
    assert manifest["items"] == 10
    data = json.loads((tmp_path / "dataset" / "train.json").read_text())
    assert len(data) == 10
    assert data == sorted(data, key=lambda row: row["id"])
    for item in items:
        assert (tmp_path / "dataset" / item.image).exists()


def test_emit_training_empty_is_valid(tmp_path: Path):
    manifest = emit_training([], tmp_path / "dataset", {})
    assert manifest["items"] == 0
    assert json.loads((tmp_path / "dataset" / "train.json").read_text()) == []


def test_emit_training_missing_image(tmp_path: Path):
    items = [make_item(0)]
    with pytest.raises(MissingImage):
        emit_training(items, tmp_path / "dataset", {})


def make_holdout_item(i: int, instance: str) -> HoldoutItem:
    choice = ChoiceQuestion(
        id=f"choice-{i:04d}", instance_id=instance, image_path=f"/w/images/s/{instance}/0.png",
        question="Is there a chair in the image?",
        options=("Yes", "No", "Cannot be determined", "No, but there is a lamp instead"),
        answer_key="A", category="entity_existence", slice=None, entity_count=2,
    )
    return holdout_item_from_choice(choice, f"images/s/{instance}/0.png")


def test_emit_holdout_disjointness_enforced(tmp_path: Path):
    train_items = [make_item(i, instance="shared-instance") for i in range(3)]
    sources = {item.image: _fake_image(tmp_path, item.image) for item in train_items}
    train_manifest = emit_training(train_items, tmp_path / "dataset", sources)

    holdout = [make_holdout_item(0, "shared-instance")]
    holdout_sources = {holdout[0].image: _fake_image(tmp_path, holdout[0].image)}
    with pytest.raises(ContaminationDetected):
        emit_holdout(holdout, tmp_path / "dataset", holdout_sources, training_manifest=train_manifest)


def test_emit_holdout_zero_fraction_is_valid(tmp_path: Path):
    manifest = emit_holdout([], tmp_path / "dataset", {}, training_manifest=None)
    assert manifest["questions"] == 0


def test_emit_holdout_counts_images(tmp_path: Path):
    items = [make_holdout_item(i, f"hold-{i % 2}") for i in range(4)]
    sources = {item.image: _fake_image(tmp_path, item.image) for item in items}
    manifest = emit_holdout(items, tmp_path / "dataset", sources)
    assert manifest["questions"] == 4
    assert manifest["images"] == 2
    assert manifest["instances"] == 2


def test_reemission_is_byte_identical(tmp_path: Path):
    items = [make_item(i) for i in range(6)]
    sources = {item.image: _fake_image(tmp_path, item.image) for item in items}
    emit_training(items, tmp_path / "d1", sources)
    emit_training(items, tmp_path / "d2", sources)
    assert (tmp_path / "d1" / "train.json").read_bytes() == (tmp_path / "d2" / "train.json").read_bytes()


# --- subsets ----------------------------------------------------------------------


def test_sample_subset_sizes_and_reproducibility():
    items = corpus(15000)
    two_k = sample_subset(items, 2000, seed=4)
    assert len(two_k) == 2000
    assert [i.id for i in sample_subset(items, 2000, seed=4)] == [i.id for i in two_k]
    assert [i.id for i in sample_subset(items, 2000, seed=5)] != [i.id for i in two_k]


def test_sample_subset_filters():
    items = corpus(400)
    directional = sample_subset(items, 50, seed=1, predicate="directional-only")
    assert all(item.slice == "directional" for item in directional)
    distance = sample_subset(items, 50, seed=1, predicate="distance-only")
    assert all(item.slice == "distance" for item in distance)
    big = sample_subset(items, 50, seed=1, predicate="min-entities-3")
    assert all(item.entity_count >= 3 for item in big)
    small = sample_subset(items, 50, seed=1, predicate="max-entities-2")
    assert all(item.entity_count < 3 for item in small)


def test_entity_count_split_partitions_corpus():
    items = corpus(400)
    big = [i for i in items if FILTERS["min-entities-3"](i)]
    small = [i for i in items if FILTERS["max-entities-2"](i)]
    assert len(big) + len(small) == len(items)
    assert not {i.id for i in big} & {i.id for i in small}


def test_sample_subset_insufficient():
    with pytest.raises(InsufficientItems):
        sample_subset(corpus(10), 11, seed=1)
    with pytest.raises(InsufficientItems):
        sample_subset(corpus(40), 40, seed=1, predicate="directional-only")


# --- reporting --------------------------------------------------------------------


def test_report_csv_shape(rig):
    instances = rig.instances(scenes=3, skgs_per_scene=3, rendered=False)
    stats = corpus_stats([inst.skg for inst in instances])
    csv_text = top_table_csv(stats.top_objects(15))
    lines = csv_text.strip().splitlines()
    assert lines[0] == "rank,label,count"
    assert len(lines) <= 16
    counts = [int(line.rsplit(",", 1)[1]) for line in lines[1:]]
    assert counts == sorted(counts, reverse=True)
    assert "top 15 objects" in report_text(stats)


def test_report_doubling(rig):
    instances = rig.instances(scenes=2, skgs_per_scene=2, rendered=False)
    skgs = [inst.skg for inst in instances]
    single = corpus_stats(skgs)
    double = corpus_stats(skgs * 2)
    # oracle: manual doubling check
    assert double.node_count == 2 * single.node_count
    for label, count in single.object_counts.items():
        assert double.object_counts[label] == 2 * count
