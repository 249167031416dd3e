"""Wikipedia-backed external knowledge with a local disk cache.

Augmentation is optional: any fetch problem degrades to an empty doc list
(logged), and offline mode never touches the network.
"""

from __future__ import annotations

import json
import logging
import re
from pathlib import Path

import requests

from ..graphs import Scene
from .base import KnowledgeDoc, KnowledgeFetcher

logger = logging.getLogger(__name__)

WIKIPEDIA_SUMMARY_URL = "https://en.wikipedia.org/api/rest_v1/page/summary/{title}"


def _cache_key(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", name.lower()).strip("-") or "scene"


class WikipediaKnowledgeFetcher(KnowledgeFetcher):
    def __init__(
        self,
        cache_dir: Path,
        max_chars: int = 4000,
        timeout: float = 10.0,
        session: requests.Session | None = None,
    ) -> None:
        self.cache_dir = Path(cache_dir)
        self.max_chars = max_chars
        self.timeout = timeout
        self.session = session or requests.Session()

    def fetch(self, scene: Scene) -> list[KnowledgeDoc]:
        cache_path = self.cache_dir / f"{_cache_key(scene.name)}.json"
        if cache_path.exists():
            try:
                payload = json.loads(cache_path.read_text(encoding="utf-8"))
                return [
                    KnowledgeDoc(scene_id=scene.id, source_url=doc["source_url"], text=doc["text"])
                    for doc in payload
                ]
            except (OSError, json.JSONDecodeError, KeyError) as exc:
                logger.warning("ignoring corrupt knowledge cache %s: %s", cache_path, exc)
        docs = self._fetch_live(scene)
        if docs:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            cache_path.write_text(
                json.dumps([{"source_url": d.source_url, "text": d.text} for d in docs], indent=1),
                encoding="utf-8",
            )
        return docs

    def _fetch_live(self, scene: Scene) -> list[KnowledgeDoc]:
        url = WIKIPEDIA_SUMMARY_URL.format(title=scene.name.replace(" ", "_"))
        try:
            response = self.session.get(url, timeout=self.timeout)
            response.raise_for_status()
            extract = response.json().get("extract", "")
        except (requests.RequestException, ValueError) as exc:
            logger.warning("knowledge fetch failed for %r: %s", scene.name, exc)
            return []
        if not extract:
            return []
        return [KnowledgeDoc(scene_id=scene.id, source_url=url, text=extract[: self.max_chars])]
