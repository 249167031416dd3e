"""End-to-end orchestration with resumable stage manifests.

Stages run in a fixed order, each reading the previous stage's artifact
files and writing its own plus a manifest stamped with the config hash.  A
stage whose manifest already matches the current config is skipped, so an
interrupted run resumes where it stopped and produces identical output.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .backends.base import ImageGenBackend, KnowledgeFetcher, OfflineKnowledgeFetcher, TextGenBackend
from .backends.catalog import CatalogTextBackend
from .backends.groundtruth import GroundTruthStore
from .backends.procedural import ProceduralImageBackend, RenderStyle
from .builder import BuilderConfig, build_skg_batch
from .config import PipelineConfig, config_hash
from .datasets import (
    HoldoutItem,
    emit_holdout,
    emit_training,
    holdout_item_from_choice,
    sample_subset,
    training_item_from_record,
)
from .errors import DistractorCollision, MissingUpstreamManifest, SpatialGenError
from .graphs import CatalogObject, Scene, SpatialKG
from .images import ImageRecord, filter_images, kept_records, render_variants
from .layout import SceneInstance, build_caption, make_instance, sample_negative, solve_layout
from .qa import ChoiceQuestion, QARecord, filter_qa, gen_entity_qa, gen_relation_qa, kept_qa, make_choice
from .seeds import derive_seed
import random

logger = logging.getLogger(__name__)

STAGES = ("scenes", "skgs", "instances", "render", "image_filter", "qa", "emit")


def _write_jsonl(path: Path, rows: Iterable[dict]) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row) + "\n")
            count += 1
    return count


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


@dataclass
class StageStatus:
    name: str
    skipped: bool = False
    counts: dict = field(default_factory=dict)


class Pipeline:
    def __init__(self, config: PipelineConfig) -> None:
        config.validate()
        self.config = config
        self.hash = config_hash(config)
        self.out = Path(config.output_dir)
        self.images_root = self.out / "images"
        self.dataset_dir = self.out / "dataset"
        self.manifest_dir = self.out / "manifests"
        self.canvas = config.make_canvas()
        self.priors = config.make_priors()
        self.ground_truth = GroundTruthStore(root=self.images_root)
        self.text_backend = self._make_text_backend()
        self.image_backend = self._make_image_backend()
        self.knowledge = self._make_knowledge()
        self.pending = 0

    # --- backend wiring -----------------------------------------------------

    def _make_text_backend(self) -> TextGenBackend:
        settings = self.config.text_backend
        if settings.kind == "catalog":
            b = self.config.builder
            return CatalogTextBackend(
                canvas=self.canvas,
                ground_truth=self.ground_truth,
                entity_cap=b.entity_cap,
                split_prob=b.split_prob,
                material_prob=b.material_prob,
                pair_prob=b.pair_prob,
                compound_prob=b.compound_prob,
            )
        from .backends.base import BackendConfig
        from .backends.remote import RemoteTextBackend

        return RemoteTextBackend(
            BackendConfig(
                endpoint=settings.endpoint,
                auth_env=settings.auth_env,
                model=settings.model,
                timeout=settings.timeout,
                max_in_flight=settings.max_in_flight,
                max_retries=settings.max_retries,
                backoff_base=settings.backoff_base,
                reparse_retries=settings.reparse_retries,
                temperature_gen=settings.temperature_gen,
                temperature_verify=settings.temperature_verify,
            )
        )

    def _make_image_backend(self) -> ImageGenBackend:
        settings = self.config.image_backend
        if settings.kind == "procedural":
            return ProceduralImageBackend(
                style=RenderStyle(draw_labels=settings.draw_labels),
                ground_truth=self.ground_truth,
                background_jitter=settings.background_jitter,
            )
        from .backends.base import BackendConfig
        from .backends.remote import RemoteImageBackend

        return RemoteImageBackend(
            BackendConfig(
                endpoint=settings.endpoint,
                auth_env=settings.auth_env,
                model=settings.model,
                timeout=settings.timeout,
                max_in_flight=settings.max_in_flight,
                max_retries=settings.max_retries,
                backoff_base=settings.backoff_base,
            )
        )

    def _make_knowledge(self) -> KnowledgeFetcher:
        settings = self.config.knowledge
        if settings.kind == "offline":
            return OfflineKnowledgeFetcher()
        from .backends.knowledge import WikipediaKnowledgeFetcher

        return WikipediaKnowledgeFetcher(
            cache_dir=self.out / settings.cache_dir, max_chars=settings.max_chars
        )

    # --- manifest helpers -----------------------------------------------------

    def _manifest_path(self, stage: str) -> Path:
        return self.manifest_dir / f"{stage}.json"

    def _stage_done(self, stage: str) -> bool:
        path = self._manifest_path(stage)
        if not path.exists():
            return False
        try:
            manifest = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            return False
        return manifest.get("config_hash") == self.hash and manifest.get("complete", True)

    def _load_manifest(self, stage: str) -> dict:
        path = self._manifest_path(stage)
        if not path.exists():
            raise MissingUpstreamManifest(f"stage {stage!r} has not run; run it first")
        manifest = json.loads(path.read_text(encoding="utf-8"))
        if manifest.get("config_hash") != self.hash:
            raise MissingUpstreamManifest(f"stage {stage!r} was built with a different config")
        return manifest

    def _write_manifest(self, stage: str, counts: dict, complete: bool = True) -> None:
        self.manifest_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "stage": stage,
            "config_hash": self.hash,
            "complete": complete,
            "counts": counts,
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
        self._manifest_path(stage).write_text(json.dumps(manifest, indent=1), encoding="utf-8")

    def _map(self, fn: Callable, items: Sequence):
        if self.config.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(item) for item in items]

    # --- stages ----------------------------------------------------------------

    def stage_scenes(self) -> StageStatus:
        if self._stage_done("scenes"):
            return StageStatus("scenes", skipped=True)
        seed = derive_seed(self.config.master_seed, "scenes")
        scenes = self.text_backend.gen_scenes(self.config.builder.scenes, seed)
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "scenes.json").write_text(
            json.dumps([s.to_dict() for s in scenes], indent=1), encoding="utf-8"
        )
        self._write_manifest("scenes", {"scenes": len(scenes)})
        return StageStatus("scenes", counts={"scenes": len(scenes)})

    def _load_scenes(self) -> list[Scene]:
        self._load_manifest("scenes")
        payload = json.loads((self.out / "scenes.json").read_text(encoding="utf-8"))
        return [Scene.from_dict(s) for s in payload]

    def stage_skgs(self) -> StageStatus:
        if self._stage_done("skgs"):
            return StageStatus("skgs", skipped=True)
        scenes = self._load_scenes()
        builder_config = BuilderConfig(
            scenes=self.config.builder.scenes,
            skgs_per_scene=self.config.builder.skgs_per_scene,
            min_objects_per_scene=self.config.builder.min_objects_per_scene,
            entity_cap=self.config.builder.entity_cap,
            master_seed=self.config.master_seed,
        )
        objects_by_scene: dict[str, list[CatalogObject]] = {}
        skgs, failures = build_skg_batch(
            builder_config,
            self.text_backend,
            knowledge=self.knowledge,
            scenes=scenes,
            objects_out=objects_by_scene,
        )
        _write_jsonl(self.out / "skgs.jsonl", (s.to_dict() for s in skgs))
        _write_jsonl(self.out / "skgs.errors.jsonl", (f.to_dict() for f in failures))
        (self.out / "objects.json").write_text(
            json.dumps(
                {sid: [o.to_dict() for o in objs] for sid, objs in sorted(objects_by_scene.items())},
                indent=1,
            ),
            encoding="utf-8",
        )
        counts = {"skgs": len(skgs), "failures": len(failures)}
        self._write_manifest("skgs", counts)
        return StageStatus("skgs", counts=counts)

    def _load_skgs(self) -> list[SpatialKG]:
        self._load_manifest("skgs")
        return [SpatialKG.from_dict(row) for row in _read_jsonl(self.out / "skgs.jsonl")]

    def _load_objects(self) -> dict[str, list[CatalogObject]]:
        payload = json.loads((self.out / "objects.json").read_text(encoding="utf-8"))
        return {
            scene_id: [CatalogObject.from_dict(o) for o in objs]
            for scene_id, objs in payload.items()
        }

    def stage_instances(self) -> StageStatus:
        if self._stage_done("instances"):
            return StageStatus("instances", skipped=True)
        skgs = self._load_skgs()
        objects = self._load_objects()
        master = self.config.master_seed

        def solve_one(skg: SpatialKG) -> SceneInstance | None:
            layout = solve_layout(
                skg,
                self.canvas,
                self.priors,
                seed=derive_seed(master, "layout", skg.id),
                max_attempts=self.config.solver.max_attempts,
            )
            if layout is None:
                return None
            scene_objects = objects.get(skg.scene.id, [])
            negative = sample_negative(
                scene_objects,
                [e.base_object for e in skg.entities],
                seed=derive_seed(master, "negative", skg.id),
                p_neg=self.config.builder.negative_prob,
                # the caption will mention every description and the scene name
                exclude_texts=[e.description for e in skg.entities] + [skg.scene.name],
            )
            caption = build_caption(skg, layout, negative, self.text_backend, derive_seed(master, "caption", skg.id))
            return make_instance(skg, layout, caption, negative)

        results = self._map(solve_one, skgs)
        instances = [inst for inst in results if inst is not None]
        unsat = len(results) - len(instances)

        ids = sorted(inst.instance_id for inst in instances)
        rng = random.Random(derive_seed(master, "split"))
        rng.shuffle(ids)
        holdout_count = int(round(self.config.holdout.fraction * len(ids)))
        holdout_ids = sorted(ids[:holdout_count])
        train_ids = sorted(ids[holdout_count:])

        _write_jsonl(self.out / "instances.jsonl", (inst.to_dict() for inst in instances))
        (self.out / "split.json").write_text(
            json.dumps({"holdout": holdout_ids, "train": train_ids}, indent=1), encoding="utf-8"
        )
        counts = {"instances": len(instances), "unsat": unsat, "holdout": len(holdout_ids)}
        self._write_manifest("instances", counts)
        return StageStatus("instances", counts=counts)

    def _load_instances(self) -> list[SceneInstance]:
        self._load_manifest("instances")
        return [SceneInstance.from_dict(row) for row in _read_jsonl(self.out / "instances.jsonl")]

    def _load_split(self) -> dict[str, list[str]]:
        return json.loads((self.out / "split.json").read_text(encoding="utf-8"))

    def stage_render(self) -> StageStatus:
        if self._stage_done("render"):
            return StageStatus("render", skipped=True)
        instances = self._load_instances()

        def render_one(instance: SceneInstance) -> list[ImageRecord]:
            return render_variants(
                instance, self.config.variants_per_instance, self.image_backend, self.images_root
            )

        all_records = [record for records in self._map(render_one, instances) for record in records]
        _write_jsonl(self.out / "image_records.jsonl", (r.to_dict() for r in all_records))
        counts = {"rendered": len(all_records)}
        self._write_manifest("render", counts)
        return StageStatus("render", counts=counts)

    def _load_image_records(self) -> list[ImageRecord]:
        return [ImageRecord.from_dict(row) for row in _read_jsonl(self.out / "image_records.jsonl")]

    def stage_image_filter(self) -> StageStatus:
        if self._stage_done("image_filter"):
            return StageStatus("image_filter", skipped=True)
        self._load_manifest("render")
        instances = {inst.instance_id: inst for inst in self._load_instances()}
        records = self._load_image_records()
        by_instance: dict[str, list[ImageRecord]] = {}
        for record in records:
            by_instance.setdefault(record.instance_id, []).append(record)

        updated: list[ImageRecord] = []
        dropped = 0
        for instance_id in sorted(by_instance):
            instance = instances[instance_id]
            filtered = filter_images(by_instance[instance_id], instance, self.text_backend, self.images_root)
            if not kept_records(filtered):
                dropped += 1
                logger.info("instance %s lost every image variant", instance_id)
            updated.extend(filtered)
        pending = sum(1 for r in updated if r.verdict == "pending")
        self.pending += pending
        _write_jsonl(self.out / "image_records.jsonl", (r.to_dict() for r in updated))
        counts = {
            "kept": sum(1 for r in updated if r.verdict == "kept"),
            "discarded": sum(1 for r in updated if r.verdict == "discarded"),
            "pending": pending,
            "dropped_instances": dropped,
        }
        self._write_manifest("image_filter", counts, complete=pending == 0)
        return StageStatus("image_filter", counts=counts)

    def stage_qa(self) -> StageStatus:
        if self._stage_done("qa"):
            return StageStatus("qa", skipped=True)
        self._load_manifest("image_filter")
        instances = {inst.instance_id: inst for inst in self._load_instances()}
        objects = self._load_objects()
        split = self._load_split()
        holdout_ids = set(split["holdout"])
        records_by_instance: dict[str, list[ImageRecord]] = {}
        for record in self._load_image_records():
            records_by_instance.setdefault(record.instance_id, []).append(record)

        master = self.config.master_seed
        qa_rows: list[QARecord] = []
        choices: list[ChoiceQuestion] = []
        collisions = 0

        for instance_id in sorted(instances):
            instance = instances[instance_id]
            instance.image_variants = kept_records(records_by_instance.get(instance_id, []))
            if not instance.image_variants:
                continue
            generated = gen_entity_qa(instance, derive_seed(master, "eqa", instance_id))
            generated += gen_relation_qa(instance, derive_seed(master, "rqa", instance_id))
            generated = filter_qa(generated, instance, self.text_backend)
            qa_rows.extend(generated)
            if instance_id in holdout_ids:
                scene_labels = [o.display_label for o in objects.get(instance.skg.scene.id, [])]
                for record in kept_qa(generated):
                    try:
                        choices.append(
                            make_choice(
                                record,
                                instance,
                                derive_seed(master, "choice"),
                                scene_labels,
                                n_options=self.config.holdout.options_per_question,
                            )
                        )
                    except DistractorCollision:
                        collisions += 1

        target = self.config.holdout.question_target
        if target is not None and len(choices) > target:
            choices = sorted(
                sample_subset(choices, target, derive_seed(master, "choice-sample")),
                key=lambda c: c.id,
            )

        pending = sum(1 for r in qa_rows if r.verdict == "pending")
        self.pending += pending
        _write_jsonl(self.out / "qa_records.jsonl", (r.to_dict() for r in qa_rows))
        _write_jsonl(self.out / "choices.jsonl", (c.to_dict() for c in choices))
        counts = {
            "qa_records": len(qa_rows),
            "kept": sum(1 for r in qa_rows if r.verdict == "kept"),
            "pending": pending,
            "choices": len(choices),
            "distractor_collisions": collisions,
        }
        self._write_manifest("qa", counts, complete=pending == 0)
        return StageStatus("qa", counts=counts)

    def stage_emit(self) -> StageStatus:
        if self._stage_done("emit"):
            return StageStatus("emit", skipped=True)
        self._load_manifest("qa")
        instances = {inst.instance_id: inst for inst in self._load_instances()}
        split = self._load_split()
        train_ids = set(split["train"])
        holdout_ids = set(split["holdout"])
        image_records = [r for r in self._load_image_records() if r.verdict == "kept"]
        sources: dict[str, Path] = {}
        for record in image_records:
            path = Path(record.path)
            rel = str(Path("images") / path.relative_to(self.images_root))
            sources[rel] = path

        def rel_for(image_path: str) -> str:
            return str(Path("images") / Path(image_path).relative_to(self.images_root))

        train_items = []
        for row in _read_jsonl(self.out / "qa_records.jsonl"):
            record = QARecord.from_dict(row)
            if record.verdict != "kept" or record.instance_id not in train_ids:
                continue
            instance = instances[record.instance_id]
            train_items.append(
                training_item_from_record(record, instance.entity_count, rel_for(record.image_path))
            )

        holdout_items: list[HoldoutItem] = []
        for row in _read_jsonl(self.out / "choices.jsonl"):
            choice = ChoiceQuestion.from_dict(row)
            if choice.instance_id not in holdout_ids:
                continue
            holdout_items.append(holdout_item_from_choice(choice, rel_for(choice.image_path)))

        extra = {"seed": self.config.master_seed, "config_hash": self.hash}
        train_manifest = emit_training(train_items, self.dataset_dir, sources, manifest_extra=extra)
        holdout_manifest = emit_holdout(
            holdout_items, self.dataset_dir, sources, training_manifest=train_manifest, manifest_extra=extra
        )
        counts = {
            "train_items": train_manifest["items"],
            "holdout_questions": holdout_manifest["questions"],
            "holdout_images": holdout_manifest["images"],
        }
        self._write_manifest("emit", counts)
        return StageStatus("emit", counts=counts)

    # --- entry points ---------------------------------------------------------

    _STAGE_FNS = {
        "scenes": stage_scenes,
        "skgs": stage_skgs,
        "instances": stage_instances,
        "render": stage_render,
        "image_filter": stage_image_filter,
        "qa": stage_qa,
        "emit": stage_emit,
    }

    def run_stage(self, stage: str) -> StageStatus:
        status = self._STAGE_FNS[stage](self)
        if status.skipped:
            logger.info("stage %-12s skipped (manifest matches config)", stage)
        else:
            logger.info("stage %-12s %s", stage, status.counts)
        return status

    def run(self) -> int:
        """Execute every stage in order; 0 on success, 1 on a partial run."""
        for stage in STAGES:
            try:
                self.run_stage(stage)
            except SpatialGenError as exc:
                logger.error("stage %s failed: %s", stage, exc)
                return 1
        return 1 if self.pending else 0
