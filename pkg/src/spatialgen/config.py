"""Declarative pipeline configuration.

One YAML file drives a whole run.  String values may interpolate
environment variables with ``${VAR}`` (intended for secrets only); every
numeric default mirrors the package's documented constants so the bundled
configs need no edits.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigInvalid
from .layout import SizePrior
from .relations import Canvas

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass
class TextBackendSettings:
    kind: str = "catalog"  # "catalog" | "remote"
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


@dataclass
class ImageBackendSettings:
    kind: str = "procedural"  # "procedural" | "remote"
    endpoint: str = ""
    auth_env: str | None = None
    model: str = "offline"
    timeout: float = 60.0
    max_in_flight: int = 2
    max_retries: int = 3
    backoff_base: float = 0.5
    draw_labels: bool = False
    background_jitter: bool = False


@dataclass
class KnowledgeSettings:
    kind: str = "offline"  # "offline" | "wikipedia"
    cache_dir: str = "cache/knowledge"
    max_chars: int = 4000


@dataclass
class BuilderSettings:
    scenes: int = 160
    skgs_per_scene: int = 25
    min_objects_per_scene: int = 5
    entity_cap: int = 6
    negative_prob: float = 0.5
    split_prob: float = 0.12
    material_prob: float = 0.2
    pair_prob: float = 0.6
    compound_prob: float = 0.25


@dataclass
class CanvasSettings:
    width: int = 512
    height: int = 512
    margin: float | None = None  # defaults to 5% of width
    near_fraction: float = 0.25
    far_fraction: float = 0.45


@dataclass
class SolverSettings:
    max_attempts: int = 1000
    min_side: int = 48
    max_side: int = 160
    aspect_min: float = 0.75
    aspect_max: float = 1.33


@dataclass
class HoldoutSettings:
    fraction: float = 0.25
    question_target: int | None = 566
    options_per_question: int = 4


@dataclass
class PipelineConfig:
    text_backend: TextBackendSettings = field(default_factory=TextBackendSettings)
    image_backend: ImageBackendSettings = field(default_factory=ImageBackendSettings)
    knowledge: KnowledgeSettings = field(default_factory=KnowledgeSettings)
    builder: BuilderSettings = field(default_factory=BuilderSettings)
    canvas: CanvasSettings = field(default_factory=CanvasSettings)
    solver: SolverSettings = field(default_factory=SolverSettings)
    holdout: HoldoutSettings = field(default_factory=HoldoutSettings)
    variants_per_instance: int = 3
    output_dir: str = "out"
    master_seed: int = 0
    workers: int = 1

    def make_canvas(self) -> Canvas:
        c = self.canvas
        return Canvas(
            width=c.width,
            height=c.height,
            margin=c.margin,
            near_fraction=c.near_fraction,
            far_fraction=c.far_fraction,
        )

    def make_priors(self) -> SizePrior:
        s = self.solver
        return SizePrior(
            min_side=s.min_side,
            max_side=s.max_side,
            aspect_min=s.aspect_min,
            aspect_max=s.aspect_max,
        )

    def validate(self) -> None:
        problems = []
        if self.text_backend.kind not in ("catalog", "remote"):
            problems.append(f"unknown text backend kind {self.text_backend.kind!r}")
        if self.image_backend.kind not in ("procedural", "remote"):
            problems.append(f"unknown image backend kind {self.image_backend.kind!r}")
        if self.knowledge.kind not in ("offline", "wikipedia"):
            problems.append(f"unknown knowledge kind {self.knowledge.kind!r}")
        if self.text_backend.kind == "remote" and not self.text_backend.endpoint:
            problems.append("remote text backend needs an endpoint")
        if self.image_backend.kind == "remote" and not self.image_backend.endpoint:
            problems.append("remote image backend needs an endpoint")
        if not 0 <= self.holdout.fraction < 1:
            problems.append("holdout fraction must be in [0, 1)")
        if not 2 <= self.holdout.options_per_question <= 4:
            problems.append("options_per_question must be between 2 and 4")
        if not self.canvas.near_fraction < self.canvas.far_fraction:
            problems.append("near_fraction must be strictly below far_fraction")
        if self.variants_per_instance < 0:
            problems.append("variants_per_instance must be non-negative")
        if self.solver.max_attempts < 1:
            problems.append("solver max_attempts must be at least 1")
        if self.workers < 1:
            problems.append("workers must be at least 1")
        if min(self.builder.scenes, self.builder.skgs_per_scene) < 1:
            problems.append("builder counts must be at least 1")
        if problems:
            raise ConfigInvalid("; ".join(problems))
        try:
            self.make_canvas()
            self.make_priors()
        except ValueError as exc:
            raise ConfigInvalid(str(exc)) from exc

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _interpolate(value):
    if isinstance(value, str):
        return _ENV_RE.sub(lambda m: os.environ.get(m.group(1), ""), value)
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    return value


def _build_section(cls, data: dict, path: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigInvalid(f"unknown config key {path}.{key}")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigInvalid(f"bad section {path}: {exc}") from exc


_SECTIONS = {
    "text_backend": TextBackendSettings,
    "image_backend": ImageBackendSettings,
    "knowledge": KnowledgeSettings,
    "builder": BuilderSettings,
    "canvas": CanvasSettings,
    "solver": SolverSettings,
    "holdout": HoldoutSettings,
}


def config_from_dict(data: dict) -> PipelineConfig:
    data = dict(data or {})
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = data.pop(name, {})
        if not isinstance(section, dict):
            raise ConfigInvalid(f"section {name} must be a mapping")
        kwargs[name] = _build_section(cls, section, name)
    scalar_fields = {
        f.name for f in dataclasses.fields(PipelineConfig) if f.name not in _SECTIONS
    }
    for key, value in data.items():
        if key not in scalar_fields:
            raise ConfigInvalid(f"unknown config key {key}")
        kwargs[key] = value
    config = PipelineConfig(**kwargs)
    config.validate()
    return config


def load_config(path: Path | str) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigInvalid(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"config is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigInvalid("config root must be a mapping")
    return config_from_dict(_interpolate(raw))


def config_hash(config: PipelineConfig) -> str:
    """Stable digest of everything that affects outputs.

    Execution parameters that cannot change the emitted bytes (output
    directory, worker count) are excluded so that resuming with a different
    machine setup still reuses completed stages.
    """
    payload = config.to_dict()
    payload.pop("output_dir", None)
    payload.pop("workers", None)
    canonical = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
