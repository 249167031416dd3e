"""Spatial knowledge graph guided synthesis of images and spatial QA data."""

from .config import PipelineConfig, load_config
from .graphs import CatalogObject, DistributionReport, Entity, Scene, SpatialKG, Triplet, corpus_stats, new_skg
from .layout import Layout, SceneInstance, SizePrior, solve_layout, verify_layout
from .pipeline import Pipeline
from .relations import (
    BoundingBox,
    Canvas,
    Direction,
    Distance,
    RelationSpec,
    canonicalize,
    check_consistency,
    classify,
    evaluate,
    invert,
)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "Canvas",
    "CatalogObject",
    "Direction",
    "Distance",
    "DistributionReport",
    "Entity",
    "Layout",
    "Pipeline",
    "PipelineConfig",
    "RelationSpec",
    "Scene",
    "SceneInstance",
    "SizePrior",
    "SpatialKG",
    "Triplet",
    "canonicalize",
    "check_consistency",
    "classify",
    "corpus_stats",
    "evaluate",
    "invert",
    "load_config",
    "new_skg",
    "solve_layout",
    "verify_layout",
    "__version__",
]
