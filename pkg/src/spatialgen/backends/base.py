"""Uniform contracts for the text-generation and image-generation services.

Two interchangeable implementations exist for each contract: a remote
JSON-over-HTTP client, and a deterministic offline stand-in (catalog text
backend, procedural renderer).  Every pipeline stage must be able to run
with zero network through the offline pair.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

from ..errors import UnsupportedCapability

if TYPE_CHECKING:
    from ..graphs import CatalogObject, Entity, Scene, SubsetSelection, Triplet
    from ..relations import BoundingBox, Canvas

CAPABILITIES = frozenset(
    {
        "gen_scenes",
        "gen_objects",
        "select_subset",
        "enrich_entities",
        "gen_triplets",
        "gen_caption",
        "gen_qa",
        "verify_image",
        "verify_qa",
    }
)


@dataclass(frozen=True)
class KnowledgeDoc:
    """An external-knowledge excerpt attached to a scene."""

    scene_id: str
    source_url: str
    text: str

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("knowledge text must be non-empty")


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str = ""
    auth_env: str | None = None
    model: str = "offline"
    timeout: float = 30.0
    max_in_flight: int = 4
    max_retries: int = 3
    backoff_base: float = 0.5
    reparse_retries: int = 2
    temperature_gen: float = 1.0
    temperature_verify: float = 0.0

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")


class TextGenBackend(ABC):
    """Contract for every text-model capability the pipeline consumes."""

    name: str = "text"
    model: str = "unknown"
    capabilities: frozenset[str] = CAPABILITIES

    @property
    def identity(self) -> str:
        return f"{self.name}:{self.model}"

    def supports(self, capability: str) -> bool:
        return capability in self.capabilities

    def _unsupported(self, capability: str):
        raise UnsupportedCapability(f"{self.identity} does not implement {capability}")

    @abstractmethod
    def gen_scenes(self, count: int, seed: int) -> list["Scene"]: ...

    @abstractmethod
    def gen_objects(self, scene: "Scene", knowledge: Sequence[KnowledgeDoc], seed: int) -> list["CatalogObject"]: ...

    @abstractmethod
    def select_subset(self, objects: Sequence["CatalogObject"], seed: int) -> "SubsetSelection": ...

    @abstractmethod
    def enrich_entities(self, selection: "SubsetSelection", seed: int) -> list["Entity"]: ...

    @abstractmethod
    def gen_triplets(self, entities: Sequence["Entity"], seed: int) -> list["Triplet"]: ...

    @abstractmethod
    def gen_caption(
        self,
        scene: "Scene | None",
        entities: Sequence["Entity"],
        triplets: Sequence["Triplet"],
        negative: "CatalogObject | None",
        seed: int,
    ) -> str: ...

    def paraphrase_question(self, question: str, seed: int) -> str:
        """Optionally rewrite question surface text; answers never pass through here."""
        return question

    @abstractmethod
    def verify_image(self, image: bytes, entities: Sequence["Entity"], triplets: Sequence["Triplet"]) -> bool: ...

    def image_violations(
        self, image: bytes, entities: Sequence["Entity"], triplets: Sequence["Triplet"]
    ) -> list[str] | None:
        """Optional diagnostics naming what failed; None when unsupported."""
        return None

    @abstractmethod
    def verify_qa(self, image: bytes, question: str, answer: str) -> bool: ...


class ImageGenBackend(ABC):
    """Contract for rendering one image from a caption plus grounded boxes."""

    name: str = "image"
    model: str = "unknown"

    @property
    def identity(self) -> str:
        return f"{self.name}:{self.model}"

    @abstractmethod
    def render(
        self,
        placements: Sequence[tuple["Entity", "BoundingBox"]],
        caption: str,
        canvas: "Canvas",
        seed: int,
        instance_id: str = "",
    ) -> bytes: ...


class KnowledgeFetcher(ABC):
    """Contract for the optional external-knowledge source."""

    @abstractmethod
    def fetch(self, scene: "Scene") -> list[KnowledgeDoc]: ...


class OfflineKnowledgeFetcher(KnowledgeFetcher):
    """No network: augmentation is optional, so offline mode yields nothing."""

    def fetch(self, scene: "Scene") -> list[KnowledgeDoc]:
        return []
