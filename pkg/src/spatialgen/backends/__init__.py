"""Backend contracts plus offline and remote implementations."""

from .base import BackendConfig, ImageGenBackend, KnowledgeDoc, KnowledgeFetcher, TextGenBackend

__all__ = [
    "BackendConfig",
    "ImageGenBackend",
    "KnowledgeDoc",
    "KnowledgeFetcher",
    "TextGenBackend",
]
