"""
Pipeline stages shared by the CLI and library callers. Each stage reads the
previous stage's files under the output directory, so stages can run alone.
"""
import asyncio
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml

from src.agents.annotator import ViewAnnotation, annotate_view_async
from src.agents.mask_filter import filter_masks, select_level
from src.agents.material_agent import FixtureMaterialProvider, LiveMaterialProvider, MaterialProvider
from src.agents.segmentation_client import FixtureSegmentationClient, SegmentationClient
from src.connectors.artifacts import (
    annotations_text,
    read_material_maps,
    votes_text,
    write_depth_map,
    write_material_map,
)
from src.connectors.cameras import load_cameras
from src.connectors.gaussian_ply import parse_gaussian_ply
from src.connectors.images import read_image, read_label_png, read_legend, write_label_png, write_legend
from src.connectors.masks import load_mask_set, write_mask_set
from src.connectors.scene_export import export_annotated_ply, export_summary, import_annotated_ply, manifest_timestamp
from src.core.calibration import load_gripper_profile
from src.core.config import PipelineConfig, settings
from src.core.errors import ConfigError, DataError, MaskError, ViewUnusableError
from src.core.lifting import lift
from src.core.material_library import MaterialLibrary, library_from_snapshot, load_library_file
from src.core.physics import estimate_mass, mass_report, plan_grasp
from src.core.rasterizer import render_depth
from src.core.volumes import estimate_volumes
from src.models.scene import AnnotatedScene, CameraModel, GaussianCloud
from src.models.schemas import GraspPlan, MetricReport
from src.monitoring.evaluation import (
    align_ground_truth,
    evaluate_hardness,
    evaluate_mass,
    evaluate_trials,
    family_legend,
    miou,
    read_hardness_points,
    read_trials,
    render_labels,
)
from src.monitoring.telemetry import record_provenance
from src.optimization.cache_manager import CacheManager
from src.utils.logger import logger, stage_timer
from src.workers.pool import map_ordered

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

# Output layout
MASKS = "masks"
MATERIAL_MAPS = "material_maps"
ANNOTATIONS = "annotations"
SCENE = "scene"
RENDERS = "renders"
PHYSICS = "physics"
EVALUATION = "evaluation"
INTERMEDIATES = "intermediates"


def select_views(cameras: Sequence[CameraModel], count: int) -> List[CameraModel]:
    """`count` views evenly spaced over the cameras sorted by view_id"""
    ordered = sorted(cameras, key=lambda c: c.view_id)
    if count >= len(ordered):
        return ordered
    picks = np.round(np.linspace(0, len(ordered) - 1, count)).astype(int)
    return [ordered[i] for i in picks]


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _write_yaml(path: Path, document) -> Path:
    return _write_text(path, yaml.safe_dump(document, sort_keys=True))


def _csv(rows: List[Dict[str, object]], columns: Sequence[str]) -> str:
    lines = [",".join(columns)]
    lines += [",".join(str(row[c]) for c in columns) for row in rows]
    return "\n".join(lines) + "\n"


class PropertyPipeline:
    """Stage orchestrator: segment -> annotate -> lift -> render -> physics -> evaluate"""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.output_dir = Path(config.output_dir)
        self._library: Optional[MaterialLibrary] = None
        self._cameras: Optional[List[CameraModel]] = None
        self._cloud: Optional[GaussianCloud] = None
        logger.info(
            "PropertyPipeline initialized",
            extra={"output_dir": str(self.output_dir), "mode": config.mode, "workers": config.workers},
        )

    # Inputs

    @property
    def library(self) -> MaterialLibrary:
        if self._library is None:
            self._library = load_library_file(self.config.library)
        return self._library

    @property
    def cameras(self) -> List[CameraModel]:
        if self._cameras is None:
            if self.config.cameras is None:
                raise ConfigError("no camera file configured (set `cameras`)")
            self._cameras = load_cameras(
                self.config.cameras, self.config.camera_format, convention=self.config.camera_convention
            )
        return self._cameras

    @property
    def cloud(self) -> GaussianCloud:
        if self._cloud is None:
            if self.config.scene is None:
                raise ConfigError("no scene PLY configured (set `scene`)")
            try:
                data = Path(self.config.scene).read_bytes()
            except OSError as e:
                raise DataError(f"cannot read scene {self.config.scene}: {e}")
            self._cloud = parse_gaussian_ply(data)
        return self._cloud

    def views(self) -> List[CameraModel]:
        return select_views(self.cameras, self.config.view_count)

    def camera(self, view_id: str) -> CameraModel:
        for cam in self.cameras:
            if cam.view_id == view_id:
                return cam
        raise DataError(f"no camera for view {view_id}")

    def image(self, cam: CameraModel) -> np.ndarray:
        if self.config.images_dir is None:
            raise ConfigError("no image directory configured (set `images_dir`)")
        images_dir = Path(self.config.images_dir)
        if not images_dir.is_dir() or not any(images_dir.iterdir()):
            raise DataError(f"image directory {images_dir} is missing or empty")
        for suffix in IMAGE_SUFFIXES:
            path = images_dir / f"{cam.view_id}{suffix}"
            if path.exists():
                image = read_image(path)
                if image.shape[:2] != (cam.height, cam.width):
                    raise DataError(
                        f"image {path} is {image.shape[1]}x{image.shape[0]}, camera is {cam.width}x{cam.height}"
                    )
                return image
        raise DataError(f"no image for view {cam.view_id} in {images_dir}")

    def _path(self, *parts: str) -> Path:
        return self.output_dir.joinpath(*parts)

    def _load_scene(self) -> AnnotatedScene:
        ply, manifest = self._path(SCENE, "annotated.ply"), self._path(SCENE, "manifest.yaml")
        if not ply.exists() or not manifest.exists():
            raise DataError(f"no annotated scene under {self._path(SCENE)}; run `lift` first")
        return import_annotated_ply(ply.read_bytes(), manifest.read_text(encoding="utf-8"))

    # Stages

    def segment(self) -> List[Path]:
        """Filtered part-level masks per selected view"""
        views = self.views()
        with stage_timer("segment", views=len(views)) as info:
            if self.config.mode == "live":
                client = SegmentationClient(
                    settings.seg_token,
                    self.config.resolved_seg_url(),
                    timeout=self.config.request_timeout,
                    points_per_side=self.config.points_per_side,
                )
            else:
                if self.config.masks_dir is None:
                    raise ConfigError("fixture mode needs `masks_dir`")
                client = FixtureSegmentationClient(self.config.masks_dir)
            images = {cam.view_id: self.image(cam) for cam in views}
            hierarchies = asyncio.run(self._segment_all(client, views, images))

            written = []
            for cam in views:
                masks = filter_masks(
                    select_level(hierarchies[cam.view_id]),
                    self.config.iou_min,
                    self.config.stability_min,
                    self.config.overlap_max,
                )
                written.append(write_mask_set(masks, self._path(MASKS), (cam.height, cam.width)))
            info["files"] = len(written)
        return written

    async def _segment_all(self, client, views, images):
        semaphore = asyncio.Semaphore(self.config.max_in_flight)

        async def one(cam):
            async with semaphore:
                return cam.view_id, await client.segment(cam.view_id, images[cam.view_id], cam)

        try:
            return dict(await asyncio.gather(*(one(cam) for cam in views)))
        finally:
            if hasattr(client, "aclose"):
                await client.aclose()

    def _provider(self) -> MaterialProvider:
        if self.config.mode == "live":
            return LiveMaterialProvider(
                self.library,
                settings.lmm_token,
                self.config.resolved_model(),
                self.config.resolved_lmm_url(),
                timeout=self.config.request_timeout,
                retry_max=self.config.retry_max,
                requests_per_second=self.config.requests_per_second,
                cache=CacheManager(self.config.cache_dir),
            )
        if self.config.fixtures_dir is None:
            raise ConfigError("fixture mode needs `fixtures_dir`")
        return FixtureMaterialProvider(self.config.fixtures_dir, self.library)

    def annotate(self) -> List[Path]:
        """Per-view material maps from the segment stage's masks"""
        views = self.views()
        library = self.library
        with stage_timer("annotate", views=len(views)) as info:
            provider = self._provider()
            results = asyncio.run(self._annotate_all(provider, views))

            written = []
            for cam in views:
                result = results[cam.view_id]
                if result is None:
                    self._drop_view_outputs(cam.view_id)
                    continue
                written.append(write_material_map(self._path(MATERIAL_MAPS), cam.view_id, result.material_map))
                _write_text(self._path(ANNOTATIONS, f"{cam.view_id}.txt"), annotations_text(result.annotations))
                description = self._path(ANNOTATIONS, f"{cam.view_id}.description.txt")
                if result.description:
                    _write_text(description, result.description + "\n")
                elif description.exists():
                    description.unlink()
            write_legend(
                self._path(MATERIAL_MAPS, "legend.txt"),
                {library.ordinal(m): m for m in library.candidates()},
            )
            info["maps"] = len(written)
        return written

    def _drop_view_outputs(self, view_id: str) -> None:
        """Remove an unusable view's map and annotations left by an earlier run"""
        stale = [
            self._path(MATERIAL_MAPS, f"{view_id}.png"),
            self._path(ANNOTATIONS, f"{view_id}.txt"),
            self._path(ANNOTATIONS, f"{view_id}.description.txt"),
        ]
        for path in stale:
            if path.exists():
                path.unlink()
                logger.info("Removed stale view output", extra={"view_id": view_id, "path": str(path)})

    async def _annotate_all(self, provider: MaterialProvider, views) -> Dict[str, Optional[ViewAnnotation]]:
        results: Dict[str, Optional[ViewAnnotation]] = {}
        try:
            for cam in views:
                mask_path = self._path(MASKS, f"{cam.view_id}.png")
                if not mask_path.exists():
                    raise MaskError(f"no masks for view {cam.view_id} at {mask_path}; run `segment` first")
                masks = load_mask_set(mask_path, cam.view_id, camera=cam)
                try:
                    results[cam.view_id] = await annotate_view_async(
                        cam.view_id,
                        self.image(cam),
                        masks,
                        self.library,
                        provider,
                        max_in_flight=self.config.max_in_flight,
                        min_segment_fraction=self.config.min_segment_fraction,
                        global_local=self.config.global_local,
                    )
                except ViewUnusableError as e:
                    logger.warning("View dropped", extra={"view_id": cam.view_id, "reason": e.message})
                    results[cam.view_id] = None
        finally:
            if hasattr(provider, "aclose"):
                await provider.aclose()
        return results

    def lift(self) -> AnnotatedScene:
        """Vote per-view material maps onto the Gaussians and export the annotated scene"""
        cloud, library = self.cloud, self.library
        views = [cam for cam in self.views() if self._path(MATERIAL_MAPS, f"{cam.view_id}.png").exists()]
        if not views:
            raise DataError(f"no material maps under {self._path(MATERIAL_MAPS)}; run `annotate` first")
        material_maps = read_material_maps(self._path(MATERIAL_MAPS), [cam.view_id for cam in views])

        with stage_timer("lift", gaussians=cloud.count, views=len(views)):
            result = lift(
                cloud,
                views,
                material_maps,
                library,
                tol_rel=self.config.tol_rel,
                front_threshold=self.config.front_threshold,
                voting=self.config.voting,
                knn=self.config.knn,
                workers=self.config.workers,
            )
            counts = result.field.provenance_counts()
            record_provenance(counts)

            scene = AnnotatedScene(
                cloud=cloud,
                field=result.field,
                library=library.snapshot(),
                provenance={
                    "views": [cam.view_id for cam in views],
                    "config_hash": self.config.config_hash(),
                    "timestamp": manifest_timestamp(self.config.mode == "fixture"),
                    "mode": self.config.mode,
                    "voting": self.config.voting,
                    "global_local": self.config.global_local,
                    "gaussians": counts,
                },
            )
            exported = export_annotated_ply(scene)
            self._path(SCENE).mkdir(parents=True, exist_ok=True)
            self._path(SCENE, "annotated.ply").write_bytes(exported.ply)
            _write_text(self._path(SCENE, "manifest.yaml"), exported.manifest)

            if self.config.dump_intermediates:
                for view_id in sorted(result.depth_maps):
                    write_depth_map(self._path(INTERMEDIATES, "depth"), result.depth_maps[view_id])
                _write_text(self._path(INTERMEDIATES, "votes.txt"), votes_text(result.votes))
        return scene

    def render_materials(self, view_ids: Optional[Sequence[str]] = None) -> List[Path]:
        """Family label PNGs of the annotated scene; selected views by default"""
        scene = self._load_scene()
        library = library_from_snapshot(scene.library)
        cams = [self.camera(v) for v in view_ids] if view_ids else self.views()
        with stage_timer("render_materials", views=len(cams)):
            renders = map_ordered(
                lambda cam: render_labels(scene.cloud, scene.field, cam, library), cams, self.config.workers
            )
            written = []
            for render in renders:
                path = self._path(RENDERS, f"{render.view_id}.png")
                write_label_png(path, render.labels)
                written.append(path)
            write_legend(self._path(RENDERS, "legend.txt"), family_legend(library))
        return written

    def physics(self, hardness_points: Optional[Path] = None) -> GraspPlan:
        """Mass, grasp plan and optional per-point hardness for the annotated scene"""
        scene = self._load_scene()
        library = library_from_snapshot(scene.library)
        gripper = load_gripper_profile(self.config.gripper)
        cfg = self.config
        with stage_timer("physics", gaussians=scene.cloud.count):
            plan, decomposition = plan_grasp(
                scene.cloud,
                scene.field,
                gripper,
                library,
                voxel_size=cfg.voxel_size,
                fill_interior=cfg.fill_interior,
                contact_point=cfg.contact_point,
                theta=cfg.theta,
                area=cfg.area,
                thickness=cfg.thickness,
                kappa_max=cfg.kappa_max,
            )
            _write_yaml(self._path(PHYSICS, "grasp_plan.yaml"), plan.model_dump(mode="json"))
            rows = mass_report(decomposition.parts, library)
            columns = ("part_id", "material_id", "gaussians", "volume_m3", "density_kg_m3", "mass_kg")
            _write_text(self._path(PHYSICS, "mass.csv"), _csv(rows, columns))
            _write_text(self._path(PHYSICS, "summary.txt"), export_summary(scene, decomposition.parts))

            if hardness_points is not None:
                report, rows = self._hardness(scene, library, read_hardness_points(hardness_points))
                _write_yaml(
                    self._path(PHYSICS, "hardness.yaml"),
                    {"points": rows, "metrics": report.metrics},
                )
        return plan

    def _hardness(self, scene: AnnotatedScene, library: MaterialLibrary, points):
        view_ids = sorted({p[0] for p in points})
        cams = {v: self.camera(v) for v in view_ids}
        depth = map_ordered(
            lambda v: render_depth(scene.cloud, cams[v], self.config.front_threshold), view_ids, self.config.workers
        )
        return evaluate_hardness(points, cams, scene.cloud, scene.field, dict(zip(view_ids, depth)), library)

    def evaluate(
        self,
        gt: Optional[Path] = None,
        view_id: Optional[str] = None,
        mass_gt: Optional[float] = None,
        hardness_points: Optional[Path] = None,
        trials: Optional[Path] = None,
    ) -> MetricReport:
        """Merge every requested metric family into one report"""
        if gt is None and mass_gt is None and hardness_points is None and trials is None:
            raise ConfigError("evaluate needs at least one of --gt, --mass-gt, --hardness-points, --trials")
        report = MetricReport()
        with stage_timer("evaluate"):
            scene = library = None
            if gt is not None or mass_gt is not None or hardness_points is not None:
                scene = self._load_scene()
                library = library_from_snapshot(scene.library)

            if gt is not None:
                gt = Path(gt)
                legend_path = gt.with_suffix(".txt")
                if not legend_path.exists():
                    raise DataError(f"ground-truth legend {legend_path} not found")
                view_id = view_id or gt.stem
                truth = align_ground_truth(read_label_png(gt), read_legend(legend_path), library, view_id)
                pred = render_labels(scene.cloud, scene.field, self.camera(view_id), library)
                seg = miou(pred, truth, family_legend(library))
                report.metrics.update(seg.metrics)
                report.per_class_iou.update(seg.per_class_iou)
                report.counts.update(seg.counts)

            if mass_gt is not None:
                parts = estimate_volumes(
                    scene.cloud, scene.field, library, self.config.voxel_size, self.config.fill_interior
                ).parts
                mass = evaluate_mass(mass_gt, estimate_mass(parts, library))
                report.metrics.update(
                    {(k if k.startswith("mass_") else f"mass_{k}"): v for k, v in mass.metrics.items()}
                )

            if hardness_points is not None:
                hardness, _ = self._hardness(scene, library, read_hardness_points(hardness_points))
                report.metrics.update({f"hardness_{k}": v for k, v in hardness.metrics.items()})
                report.counts.update({f"hardness_{k}": v for k, v in hardness.counts.items()})

            if trials is not None:
                rates = evaluate_trials(read_trials(trials))
                report.metrics.update(rates.metrics)
                report.counts.update(rates.counts)

            _write_text(self._path(EVALUATION, "report.csv"), report.to_csv())
            _write_yaml(self._path(EVALUATION, "report.yaml"), report.model_dump(mode="json"))
        logger.info("Evaluation finished", extra={"metrics": report.metrics})
        return report

    def run(self, hardness_points: Optional[Path] = None, **evaluation) -> AnnotatedScene:
        """All stages in order; evaluate only when evaluation inputs are given"""
        self.segment()
        self.annotate()
        scene = self.lift()
        self.render_materials()
        self.physics(hardness_points=hardness_points)
        if any(v is not None for v in evaluation.values()):
            self.evaluate(hardness_points=hardness_points, **evaluation)
        return scene
