"""Image variant rendering and graph-alignment filtering."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

from PIL import Image

from .backends.groundtruth import image_fingerprint
from .errors import BackendUnavailable
from .seeds import derive_seed

if TYPE_CHECKING:
    from .backends.base import ImageGenBackend, TextGenBackend
    from .layout import SceneInstance

logger = logging.getLogger(__name__)

VERDICT_PENDING = "pending"
VERDICT_KEPT = "kept"
VERDICT_DISCARDED = "discarded"


@dataclass
class ImageRecord:
    instance_id: str
    variant_index: int
    variant_seed: int
    path: str
    backend_id: str
    verdict: str = VERDICT_PENDING
    discard_reason: str | None = None

    @property
    def record_id(self) -> str:
        return f"{self.instance_id}/{self.variant_index}"

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "variant_index": self.variant_index,
            "variant_seed": self.variant_seed,
            "path": self.path,
            "backend_id": self.backend_id,
            "verdict": self.verdict,
            "discard_reason": self.discard_reason,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ImageRecord":
        return cls(**data)


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")


def instance_image_dir(images_root: Path, instance: "SceneInstance") -> Path:
    return images_root / _slug(instance.skg.scene.name) / instance.instance_id


def render_variants(
    instance: "SceneInstance",
    n_variants: int,
    backend: "ImageGenBackend",
    images_root: Path,
) -> list[ImageRecord]:
    """Render ``n_variants`` seeded images for one instance and write PNGs."""
    records: list[ImageRecord] = []
    if n_variants <= 0:
        return records
    directory = instance_image_dir(images_root, instance)
    directory.mkdir(parents=True, exist_ok=True)
    placements = [(entity, instance.layout.boxes[entity.id]) for entity in instance.skg.entities]
    store = getattr(backend, "ground_truth", None)
    fingerprints = {}
    for index in range(n_variants):
        seed = derive_seed(instance.skg.provenance_seed, "variant", index)
        try:
            data = backend.render(
                placements, instance.caption, instance.layout.canvas, seed, instance_id=instance.instance_id
            )
        except BackendUnavailable:
            raise
        except Exception as exc:  # per-variant failures never sink the instance
            logger.warning("render failed for %s variant %d: %s", instance.instance_id, index, exc)
            continue
        path = directory / f"{index}.png"
        path.write_bytes(data)
        records.append(
            ImageRecord(
                instance_id=instance.instance_id,
                variant_index=index,
                variant_seed=seed,
                path=str(path),
                backend_id=backend.identity,
            )
        )
        if store is not None:
            record = store.lookup(data)
            if record is not None:
                fingerprints[image_fingerprint(data)] = record
    if store is not None and fingerprints:
        store.save_instance(directory, fingerprints)
    return records


def _decodes(path: Path) -> bool:
    try:
        with Image.open(path) as img:
            img.verify()
        return True
    except Exception:
        return False


def filter_images(
    records: Sequence[ImageRecord],
    instance: "SceneInstance",
    backend: "TextGenBackend",
    images_root: Path | None = None,
) -> list[ImageRecord]:
    """Set each record's verdict by asking the backend whether the image
    still aligns with the graph.  Discarded files are moved under
    ``discarded/`` (kept on disk for audit); pending verdicts survive only
    a backend outage and are retried by the caller.
    """
    updated: list[ImageRecord] = []
    for record in records:
        path = Path(record.path)
        if not path.exists() or not _decodes(path):
            record.verdict = VERDICT_DISCARDED
            record.discard_reason = "file missing or undecodable"
            updated.append(record)
            continue
        data = path.read_bytes()
        try:
            aligned = backend.verify_image(data, instance.skg.entities, instance.skg.triplets)
        except BackendUnavailable as exc:
            logger.warning("image filter unavailable for %s: %s", record.record_id, exc)
            record.verdict = VERDICT_PENDING
            updated.append(record)
            continue
        if aligned:
            record.verdict = VERDICT_KEPT
            record.discard_reason = None
        else:
            record.verdict = VERDICT_DISCARDED
            violations = backend.image_violations(data, instance.skg.entities, instance.skg.triplets)
            record.discard_reason = "; ".join(violations) if violations else "backend rejected alignment"
            if images_root is not None:
                record.path = str(_move_to_discarded(path, images_root))
        updated.append(record)
    return updated


def _move_to_discarded(path: Path, images_root: Path) -> Path:
    try:
        relative = path.relative_to(images_root)
    except ValueError:
        relative = Path(path.name)
    target = images_root / "discarded" / relative
    target.parent.mkdir(parents=True, exist_ok=True)
    path.replace(target)
    return target


def kept_records(records: Sequence[ImageRecord]) -> list[ImageRecord]:
    return [r for r in records if r.verdict == VERDICT_KEPT]
