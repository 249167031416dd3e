"""Deterministic offline renderer: one styled solid shape per entity box.

The stand-in for the diffusion service.  Rendering is pixel-deterministic
given (placements, style, seed), each entity gets a visually distinct
(shape, color) pair, and the exact box of every entity can be recovered
from the pixels - which makes the drawn image a complete ground-truth
carrier for verification.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from PIL import Image, ImageDraw

from ..graphs import Entity
from ..relations import BoundingBox, Canvas
from .base import ImageGenBackend
from .groundtruth import GroundTruthStore, RenderedEntity, RenderRecord

BACKGROUND_RGB = (235, 235, 235)

# palette order doubles as the fallback color rotation for unattributed entities
COLOR_RGB: dict[str, tuple[int, int, int]] = {
    "red": (214, 39, 40),
    "blue": (31, 119, 180),
    "green": (44, 160, 44),
    "yellow": (255, 221, 51),
    "orange": (255, 127, 14),
    "purple": (148, 103, 189),
    "pink": (227, 119, 194),
    "brown": (140, 86, 75),
    "teal": (23, 190, 207),
    "gray": (127, 127, 127),
    "black": (40, 40, 40),
    "white": (252, 252, 252),
}

SHAPES = ("rectangle", "ellipse", "triangle")


@dataclass(frozen=True)
class RenderStyle:
    """How entities are drawn; colors follow the entity's color attribute."""

    palette: Mapping[str, tuple[int, int, int]] = field(default_factory=lambda: dict(COLOR_RGB))
    shapes: tuple[str, ...] = SHAPES
    draw_labels: bool = False
    background: tuple[int, int, int] = BACKGROUND_RGB


def assign_styles(
    entities: Sequence[Entity], style: RenderStyle | None = None
) -> dict[str, tuple[str, tuple[int, int, int]]]:
    """Deterministic entity -> (shape, rgb) map with all-distinct colors."""
    style = style or RenderStyle()
    palette_cycle = list(style.palette.values())
    used: set[tuple[int, int, int]] = {style.background}
    assignment: dict[str, tuple[str, tuple[int, int, int]]] = {}
    for index, entity in enumerate(entities):
        color_name = entity.attributes.get("color")
        rgb = style.palette.get(color_name) if color_name else None
        if rgb is None:
            rgb = palette_cycle[index % len(palette_cycle)]
        while rgb in used:  # same attribute color twice: nudge the shade
            rgb = tuple((channel + 17) % 256 for channel in rgb)  # type: ignore[assignment]
        used.add(rgb)
        shape = style.shapes[index % len(style.shapes)]
        assignment[entity.id] = (shape, rgb)
    return assignment


def _draw_entity(draw: ImageDraw.ImageDraw, shape: str, box: BoundingBox, rgb: tuple[int, int, int]) -> None:
    x0, y0 = box.x, box.y
    x1, y1 = box.x + box.w - 1, box.y + box.h - 1
    if shape == "rectangle":
        draw.rectangle([x0, y0, x1, y1], fill=rgb)
    elif shape == "ellipse":
        draw.ellipse([x0, y0, x1, y1], fill=rgb)
    elif shape == "triangle":
        apex = ((x0 + x1) // 2, y0)
        draw.polygon([apex, (x0, y1), (x1, y1)], fill=rgb)
    else:
        raise ValueError(f"unknown shape {shape!r}")


class ProceduralImageBackend(ImageGenBackend):
    """Draws each entity's shape exactly inside its box on a neutral background."""

    name = "procedural"
    model = "shapes-v1"

    def __init__(
        self,
        style: RenderStyle | None = None,
        ground_truth: GroundTruthStore | None = None,
        background_jitter: bool = False,
    ) -> None:
        self.style = style or RenderStyle()
        self.ground_truth = ground_truth
        self.background_jitter = background_jitter

    def render(
        self,
        placements: Sequence[tuple[Entity, BoundingBox]],
        caption: str,
        canvas: Canvas,
        seed: int,
        instance_id: str = "",
    ) -> bytes:
        image = Image.new("RGB", (canvas.width, canvas.height), self.style.background)
        if self.background_jitter:
            self._jitter_background(image, seed)
        draw = ImageDraw.Draw(image)
        entities = [entity for entity, _ in placements]
        styles = assign_styles(entities, self.style)
        for entity, box in placements:
            shape, rgb = styles[entity.id]
            _draw_entity(draw, shape, box, rgb)
            if self.style.draw_labels:
                draw.text((box.x + 2, box.y + 2), entity.base_object.label, fill=(20, 20, 20))
        buffer = io.BytesIO()
        image.save(buffer, format="PNG")
        data = buffer.getvalue()
        if self.ground_truth is not None:
            record = RenderRecord(
                instance_id=instance_id,
                canvas=canvas,
                entities=tuple(
                    RenderedEntity(
                        entity_id=entity.id,
                        description=entity.description,
                        label=entity.base_object.display_label,
                        attributes=dict(entity.attributes),
                        box=box,
                        color=styles[entity.id][1],
                        shape=styles[entity.id][0],
                    )
                    for entity, box in placements
                ),
            )
            self.ground_truth.register(data, record)
        return data

    @staticmethod
    def _jitter_background(image: Image.Image, seed: int) -> None:
        # subtle deterministic texture; off by default so variants stay bit-identical
        rng = np.random.default_rng(seed)
        noise = rng.integers(-4, 5, size=(image.height, image.width, 1), dtype=np.int16)
        pixels = np.asarray(image, dtype=np.int16) + noise
        image.paste(Image.fromarray(np.clip(pixels, 0, 255).astype(np.uint8)))


def recover_boxes(
    image: bytes, entities: Sequence[Entity], style: RenderStyle | None = None
) -> dict[str, BoundingBox | None]:
    """Recover each entity's drawn box from pixels via its assigned color mask."""
    pixels = np.asarray(Image.open(io.BytesIO(image)).convert("RGB"))
    styles = assign_styles(entities, style)
    boxes: dict[str, BoundingBox | None] = {}
    for entity in entities:
        _, rgb = styles[entity.id]
        mask = np.all(pixels == np.array(rgb, dtype=np.uint8), axis=-1)
        ys, xs = np.nonzero(mask)
        if xs.size == 0:
            boxes[entity.id] = None
            continue
        x0, x1 = int(xs.min()), int(xs.max())
        y0, y1 = int(ys.min()), int(ys.max())
        boxes[entity.id] = BoundingBox(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
    return boxes
