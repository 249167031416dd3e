"""JSON-over-HTTP clients for hosted text and layout-to-image services.

Request shape is chat-completion style: {model, messages[], temperature,
seed?} -> {text}.  Each logical request carries an idempotency key derived
from its job seed so provider-side retries cannot duplicate pipeline
records; unparseable replies get a couple of stricter re-asks before the
item fails with MalformedResponse.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import re
import threading
import time
from importlib import resources
from typing import Callable, Sequence

import requests

from ..builder import select_subset as _select_subset
from ..errors import BackendUnavailable, MalformedResponse, UnknownRelation
from ..graphs import CatalogObject, Entity, Scene, SubsetSelection, Triplet
from ..relations import BoundingBox, Canvas, canonicalize
from ..seeds import derive_seed, stable_id
from .base import BackendConfig, ImageGenBackend, KnowledgeDoc, TextGenBackend

logger = logging.getLogger(__name__)

REPARSE_SUFFIX = "\nRespond with the requested format only, with no extra commentary."


def load_template(name: str) -> str:
    return resources.files("spatialgen.data.templates").joinpath(name).read_text("utf-8")


class _InFlightGauge:
    """Bounds concurrent requests and records the observed peak (test hook)."""

    def __init__(self, limit: int) -> None:
        self._semaphore = threading.BoundedSemaphore(limit)
        self._lock = threading.Lock()
        self._current = 0
        self.peak = 0

    def __enter__(self) -> "_InFlightGauge":
        self._semaphore.acquire()
        with self._lock:
            self._current += 1
            self.peak = max(self.peak, self._current)
        return self

    def __exit__(self, *exc_info) -> None:
        with self._lock:
            self._current -= 1
        self._semaphore.release()


class _HttpClient:
    def __init__(self, config: BackendConfig, session: requests.Session | None = None) -> None:
        self.config = config
        self.session = session or requests.Session()
        self.gauge = _InFlightGauge(config.max_in_flight)

    def _headers(self, idempotency_key: str) -> dict[str, str]:
        headers = {"Content-Type": "application/json", "Idempotency-Key": idempotency_key}
        if self.config.auth_env:
            token = os.environ.get(self.config.auth_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def post(self, payload: dict, idempotency_key: str) -> requests.Response:
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(self.config.backoff_base * (2 ** (attempt - 1)))
            try:
                with self.gauge:
                    response = self.session.post(
                        self.config.endpoint,
                        json=payload,
                        headers=self._headers(idempotency_key),
                        timeout=self.config.timeout,
                    )
            except requests.RequestException as exc:
                last_error = exc
                logger.warning("request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if response.status_code in (429,) or response.status_code >= 500:
                last_error = BackendUnavailable(f"HTTP {response.status_code}")
                logger.warning("retryable status %d (attempt %d)", response.status_code, attempt + 1)
                continue
            if response.status_code >= 400:
                raise BackendUnavailable(f"HTTP {response.status_code}: {response.text[:200]}")
            return response
        raise BackendUnavailable(f"no response after {self.config.max_retries + 1} attempts: {last_error}")


def _parse_list(text: str) -> list[str]:
    """Accept a JSON array of strings or a plain bulleted/numbered list."""
    text = text.strip()
    try:
        payload = json.loads(text)
        if isinstance(payload, list) and all(isinstance(x, str) for x in payload):
            return [x.strip() for x in payload if x.strip()]
    except json.JSONDecodeError:
        pass
    items = []
    for line in text.splitlines():
        line = re.sub(r"^\s*(?:[-*•]|\d+[.)])\s*", "", line).strip().strip('"').strip(",")
        if line:
            items.append(line)
    if not items:
        raise MalformedResponse(f"no list items in reply: {text[:120]!r}")
    return items


def _parse_json_array(text: str) -> list[dict]:
    text = text.strip()
    match = re.search(r"\[.*\]", text, re.DOTALL)
    if match:
        text = match.group(0)
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedResponse(f"reply is not JSON: {exc}") from exc
    if not isinstance(payload, list):
        raise MalformedResponse("reply JSON is not an array")
    return payload


def _parse_yes_no(text: str) -> bool:
    token = text.strip().strip(".").lower()
    if token in ("yes", "true"):
        return True
    if token in ("no", "false"):
        return False
    raise MalformedResponse(f"expected yes/no, got {text[:60]!r}")


class RemoteTextBackend(TextGenBackend):
    """Prompt-template client for every text capability."""

    name = "remote"

    def __init__(self, config: BackendConfig, session: requests.Session | None = None) -> None:
        self.config = config
        self.model = config.model
        self.client = _HttpClient(config, session)

    @property
    def peak_in_flight(self) -> int:
        return self.client.gauge.peak

    # --- plumbing -------------------------------------------------------

    def _chat(
        self,
        prompt: str,
        temperature: float,
        seed: int,
        purpose: str,
        image: bytes | None = None,
    ) -> str:
        content: object = prompt
        if image is not None:
            encoded = base64.b64encode(image).decode("ascii")
            content = [
                {"type": "text", "text": prompt},
                {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{encoded}"}},
            ]
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": temperature,
            "seed": seed,
        }
        key = stable_id("req", purpose, seed, length=24)
        response = self.client.post(payload, idempotency_key=key)
        try:
            return response.json()["text"]
        except (ValueError, KeyError) as exc:
            raise MalformedResponse(f"reply body missing text field: {exc}") from exc

    def _ask_parsed(
        self,
        prompt: str,
        parse: Callable[[str], object],
        temperature: float,
        seed: int,
        purpose: str,
        image: bytes | None = None,
    ):
        """Ask, parse, and on parse failure re-ask with a stricter suffix."""
        attempts = 1 + self.config.reparse_retries
        last: MalformedResponse | None = None
        for attempt in range(attempts):
            suffix = REPARSE_SUFFIX if attempt else ""
            text = self._chat(prompt + suffix, temperature, derive_seed(seed, attempt), purpose, image)
            try:
                return parse(text)
            except (MalformedResponse, UnknownRelation, ValueError) as exc:
                last = exc if isinstance(exc, MalformedResponse) else MalformedResponse(str(exc))
                logger.warning("reparse retry %d for %s: %s", attempt + 1, purpose, exc)
        raise last  # type: ignore[misc]

    # --- capabilities ------------------------------------------------------

    def gen_scenes(self, count: int, seed: int) -> list[Scene]:
        prompt = load_template("scenes.txt").format(count=count)

        def parse(text: str) -> list[Scene]:
            names = list(dict.fromkeys(name.lower() for name in _parse_list(text)))
            if len(names) < count:
                raise MalformedResponse(f"{len(names)} distinct scenes, {count} requested")
            return [Scene(id=stable_id("scene", name), name=name, source="llm") for name in names[:count]]

        return self._ask_parsed(prompt, parse, self.config.temperature_gen, seed, "gen_scenes")

    def gen_objects(self, scene: Scene, knowledge: Sequence[KnowledgeDoc], seed: int) -> list[CatalogObject]:
        knowledge_text = "\n\n".join(doc.text for doc in knowledge) or "(no reference documents)"
        prompt = load_template("objects.txt").format(scene=scene.name, knowledge=knowledge_text)

        def parse(text: str) -> list[CatalogObject]:
            labels = list(dict.fromkeys(label.lower() for label in _parse_list(text)))
            return [CatalogObject(scene_id=scene.id, label=label) for label in labels]

        return self._ask_parsed(prompt, parse, self.config.temperature_gen, seed, f"gen_objects:{scene.name}")

    def select_subset(self, objects: Sequence[CatalogObject], seed: int) -> SubsetSelection:
        # a weighted local draw; the model adds value at enrichment, not here
        return _select_subset(objects, seed)

    def enrich_entities(self, selection: SubsetSelection, seed: int) -> list[Entity]:
        listing = ", ".join(obj.display_label for obj in selection.chosen)
        prompt = load_template("entities.txt").format(objects=listing)

        def parse(text: str) -> list[Entity]:
            rows = _parse_json_array(text)
            entities = []
            by_label = {obj.display_label: obj for obj in selection.chosen}
            for index, row in enumerate(rows):
                try:
                    base = by_label.get(row.get("base", ""), selection.chosen[min(index, selection.k - 1)])
                    entities.append(
                        Entity(
                            id=stable_id(selection.scene_id, row["description"], index),
                            base_object=base,
                            description=row["description"],
                            attributes={k: str(v) for k, v in row.get("attributes", {}).items()},
                        )
                    )
                except (KeyError, TypeError) as exc:
                    raise MalformedResponse(f"bad entity row {row!r}: {exc}") from exc
            return entities

        return self._ask_parsed(prompt, parse, self.config.temperature_gen, seed, "enrich_entities")

    def gen_triplets(self, entities: Sequence[Entity], seed: int) -> list[Triplet]:
        by_description = {e.description.lower(): e.id for e in entities}
        listing = "\n".join(f"- {e.description}" for e in entities)
        prompt = load_template("triplets.txt").format(entities=listing)

        def parse(text: str) -> list[Triplet]:
            rows = _parse_json_array(text)
            triplets = []
            for row in rows:
                try:
                    subject = by_description[row["subject"].lower()]
                    obj = by_description[row["object"].lower()]
                    relation = canonicalize(row["relation"])
                except KeyError as exc:
                    raise MalformedResponse(f"triplet names unknown entity: {row!r}") from exc
                triplets.append(Triplet(subject=subject, relation=relation, object=obj))
            return triplets

        return self._ask_parsed(prompt, parse, self.config.temperature_gen, seed, "gen_triplets")

    def gen_caption(
        self,
        scene: Scene | None,
        entities: Sequence[Entity],
        triplets: Sequence[Triplet],
        negative: CatalogObject | None,
        seed: int,
    ) -> str:
        by_id = {e.id: e.description for e in entities}
        relations = "; ".join(
            f"{by_id[t.subject]} is {t.relation.sentence_phrase} {by_id[t.object]}" for t in triplets
        )
        prompt = load_template("caption.txt").format(
            scene=scene.name if scene else "a realistic scene",
            entities=", ".join(by_id.values()),
            relations=relations or "(none)",
            excluded=negative.display_label if negative else "(none)",
        )
        return self._chat(prompt, self.config.temperature_gen, seed, "gen_caption").strip()

    def paraphrase_question(self, question: str, seed: int) -> str:
        prompt = load_template("paraphrase.txt").format(question=question)
        return self._chat(prompt, self.config.temperature_gen, seed, "paraphrase").strip()

    def verify_image(self, image: bytes, entities: Sequence[Entity], triplets: Sequence[Triplet]) -> bool:
        descriptions = "\n".join(f"- {e.description}" for e in entities)
        relations = "\n".join(
            f"- {t.subject} {t.relation.canonical_phrase} {t.object}" for t in triplets
        )
        prompt = load_template("verify_image.txt").format(entities=descriptions, relations=relations)
        seed = derive_seed("verify_image", image[:64])
        return self._ask_parsed(
            prompt, _parse_yes_no, self.config.temperature_verify, seed, "verify_image", image=image
        )

    def verify_qa(self, image: bytes, question: str, answer: str) -> bool:
        prompt = load_template("verify_qa.txt").format(question=question, answer=answer)
        seed = derive_seed("verify_qa", question, answer)
        return self._ask_parsed(
            prompt, _parse_yes_no, self.config.temperature_verify, seed, "verify_qa", image=image
        )


class RemoteImageBackend(ImageGenBackend):
    """Layout-conditioned diffusion service client: boxes + caption -> PNG."""

    name = "remote-image"

    def __init__(self, config: BackendConfig, session: requests.Session | None = None) -> None:
        self.config = config
        self.model = config.model
        self.client = _HttpClient(config, session)

    def render(
        self,
        placements: Sequence[tuple[Entity, BoundingBox]],
        caption: str,
        canvas: Canvas,
        seed: int,
        instance_id: str = "",
    ) -> bytes:
        payload = {
            "model": self.config.model,
            "caption": caption,
            "width": canvas.width,
            "height": canvas.height,
            "boxes": [
                {"description": entity.description, "box": box.to_list()}
                for entity, box in placements
            ],
            "seed": seed,
        }
        key = stable_id("render", instance_id or caption, seed, length=24)
        response = self.client.post(payload, idempotency_key=key)
        data = response.content
        if not data.startswith(b"\x89PNG"):
            raise MalformedResponse("image service did not return PNG bytes")
        return data
