from __future__ import annotations

from pathlib import Path

import pytest

from spatialgen.backends.catalog import CatalogTextBackend
from spatialgen.backends.groundtruth import GroundTruthStore
from spatialgen.backends.procedural import ProceduralImageBackend
from spatialgen.builder import BuilderConfig, build_skg_batch
from spatialgen.images import filter_images, render_variants
from spatialgen.layout import SceneInstance, SizePrior, build_caption, make_instance, sample_negative, solve_layout
from spatialgen.relations import Canvas
from spatialgen.seeds import derive_seed


class OfflineRig:
    """A wired offline backend pair plus helpers to mint test instances."""

    def __init__(self, root: Path) -> None:
        self.root = root
        self.images_root = root / "images"
        self.store = GroundTruthStore(root=self.images_root)
        self.text = CatalogTextBackend(ground_truth=self.store)
        self.image = ProceduralImageBackend(ground_truth=self.store)
        self.canvas = Canvas()
        self.priors = SizePrior()
        self._objects_cache: dict[str, list] = {}

    def instances(
        self,
        scenes: int = 3,
        skgs_per_scene: int = 3,
        master_seed: int = 101,
        variants: int = 1,
        rendered: bool = True,
        p_neg: float = 0.5,
    ) -> list[SceneInstance]:
        config = BuilderConfig(scenes=scenes, skgs_per_scene=skgs_per_scene, master_seed=master_seed)
        objects_by_scene: dict = {}
        skgs, _ = build_skg_batch(config, self.text, objects_out=objects_by_scene)
        self._objects_cache.update(objects_by_scene)
        out = []
        for skg in skgs:
            layout = solve_layout(skg, self.canvas, self.priors, seed=derive_seed(master_seed, "layout", skg.id))
            if layout is None:
                continue
            negative = sample_negative(
                objects_by_scene.get(skg.scene.id, []),
                [e.base_object for e in skg.entities],
                seed=derive_seed(master_seed, "neg", skg.id),
                p_neg=p_neg,
                exclude_texts=[e.description for e in skg.entities] + [skg.scene.name],
            )
            caption = build_caption(skg, layout, negative, self.text)
            instance = make_instance(skg, layout, caption, negative)
            if rendered:
                records = render_variants(instance, variants, self.image, self.images_root)
                records = filter_images(records, instance, self.text, self.images_root)
                instance.image_variants = records
            out.append(instance)
        return out

    def scene_labels(self, instance: SceneInstance) -> list[str]:
        objects = self._objects_cache.get(instance.skg.scene.id, [])
        return [o.display_label for o in objects]


@pytest.fixture
def rig(tmp_path: Path) -> OfflineRig:
    return OfflineRig(tmp_path)
