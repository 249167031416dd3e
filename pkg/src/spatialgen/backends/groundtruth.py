"""Private render records for the offline verification path.

The procedural renderer knows exactly what it drew.  It files one record
per produced image, keyed by the SHA-256 of the PNG bytes, so the offline
text backend can later answer "is this QA pair correct for this image?"
from the image alone - the graph itself is withheld from that call on
purpose.  Records are also written next to the PNGs so that separate CLI
stage invocations can verify images rendered by an earlier process.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

from ..relations import BoundingBox, Canvas

logger = logging.getLogger(__name__)

GROUND_TRUTH_FILENAME = "ground_truth.json"


def image_fingerprint(image: bytes) -> str:
    return hashlib.sha256(image).hexdigest()


@dataclass(frozen=True)
class RenderedEntity:
    entity_id: str
    description: str
    label: str
    attributes: Mapping[str, str]
    box: BoundingBox
    color: tuple[int, int, int]
    shape: str

    def to_dict(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "description": self.description,
            "label": self.label,
            "attributes": dict(self.attributes),
            "box": self.box.to_list(),
            "color": list(self.color),
            "shape": self.shape,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RenderedEntity":
        return cls(
            entity_id=data["entity_id"],
            description=data["description"],
            label=data["label"],
            attributes=dict(data["attributes"]),
            box=BoundingBox.from_list(data["box"]),
            color=tuple(data["color"]),
            shape=data["shape"],
        )


@dataclass(frozen=True)
class RenderRecord:
    instance_id: str
    canvas: Canvas
    entities: tuple[RenderedEntity, ...]

    def entity_by_description(self, descriptor: str) -> RenderedEntity | None:
        wanted = descriptor.strip().lower()
        for entity in self.entities:
            desc = entity.description.lower()
            if desc == wanted or _strip_article(desc) == _strip_article(wanted):
                return entity
        return None

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "canvas": self.canvas.to_dict(),
            "entities": [e.to_dict() for e in self.entities],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RenderRecord":
        return cls(
            instance_id=data["instance_id"],
            canvas=Canvas.from_dict(data["canvas"]),
            entities=tuple(RenderedEntity.from_dict(e) for e in data["entities"]),
        )


def _strip_article(text: str) -> str:
    for article in ("a ", "an ", "the "):
        if text.startswith(article):
            return text[len(article):]
    return text


@dataclass
class GroundTruthStore:
    """Fingerprint-keyed registry of render records, with optional disk echo."""

    root: Path | None = None
    _records: dict[str, RenderRecord] = field(default_factory=dict)
    _scanned: bool = field(default=False, repr=False)

    def register(self, image: bytes, record: RenderRecord) -> str:
        fingerprint = image_fingerprint(image)
        self._records[fingerprint] = record
        return fingerprint

    def save_instance(self, directory: Path, fingerprints: Mapping[str, RenderRecord]) -> Path:
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / GROUND_TRUTH_FILENAME
        payload = {fp: record.to_dict() for fp, record in sorted(fingerprints.items())}
        path.write_text(json.dumps(payload, indent=1), encoding="utf-8")
        return path

    def lookup(self, image: bytes) -> RenderRecord | None:
        fingerprint = image_fingerprint(image)
        record = self._records.get(fingerprint)
        if record is None and not self._scanned and self.root is not None:
            self._scan_disk()
            record = self._records.get(fingerprint)
        return record

    def _iter_files(self) -> Iterator[Path]:
        assert self.root is not None
        yield from sorted(self.root.rglob(GROUND_TRUTH_FILENAME))

    def _scan_disk(self) -> None:
        self._scanned = True
        count = 0
        for path in self._iter_files():
            try:
                payload = json.loads(path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                logger.warning("skipping unreadable ground truth file %s: %s", path, exc)
                continue
            for fingerprint, data in payload.items():
                self._records.setdefault(fingerprint, RenderRecord.from_dict(data))
                count += 1
        logger.debug("loaded %d render records from %s", count, self.root)
