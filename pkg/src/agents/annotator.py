"""
Per-view material annotation: one description query, then one query per segment
"""
import asyncio
from dataclasses import dataclass
from typing import List

import numpy as np

from src.agents.material_agent import MaterialProvider
from src.agents.prompting import build_prompt, triptych_images
from src.core.errors import MaskError, ViewUnusableError
from src.core.material_library import MaterialLibrary
from src.models.scene import MaskSet
from src.models.schemas import SegmentAnnotation
from src.utils.logger import logger

MIN_SEGMENT_FRACTION = 0.001
MAX_IN_FLIGHT = 4


@dataclass
class ViewAnnotation:
    view_id: str
    material_map: np.ndarray  # uint16 material ordinals, 0 = unlabeled
    annotations: List[SegmentAnnotation]
    description: str = ""


def paint_material_map(
    shape, masks: MaskSet, annotations: List[SegmentAnnotation], library: MaterialLibrary
) -> np.ndarray:
    """Overlaps go to the higher confidence, then the smaller mask, then the smaller id"""
    material_map = np.zeros(shape, dtype=np.uint16)
    resolved = [a for a in annotations if not a.unresolved]
    areas = {m.segment_id: m.area for m in masks.masks}
    # Painted in ascending priority so the winner is written last
    for a in sorted(resolved, key=lambda a: (a.confidence, -areas[a.segment_id], -a.segment_id)):
        material_map[masks.by_id(a.segment_id).bitmap] = library.ordinal(a.material_id)
    return material_map


async def annotate_view_async(
    view_id: str,
    image: np.ndarray,
    masks: MaskSet,
    library: MaterialLibrary,
    provider: MaterialProvider,
    max_in_flight: int = MAX_IN_FLIGHT,
    min_segment_fraction: float = MIN_SEGMENT_FRACTION,
    global_local: bool = True,
) -> ViewAnnotation:
    h, w = image.shape[:2]
    for mask in masks.masks:
        if mask.bitmap.shape != (h, w):
            raise MaskError(f"view {view_id}: mask {mask.segment_id} is {mask.bitmap.shape}, image is {(h, w)}")

    description = await provider.describe(view_id, image) if global_local else ""
    candidates = library.candidates()
    families = {material_id: library.family_of(material_id) for material_id in candidates}

    min_area = min_segment_fraction * h * w
    queried = [m for m in masks.masks if m.area >= min_area]
    skipped = len(masks) - len(queried)

    semaphore = asyncio.Semaphore(max_in_flight)

    async def query(mask) -> SegmentAnnotation:
        bundle = build_prompt(description, candidates, triptych_images(image, mask.bitmap, global_local), families)
        async with semaphore:
            return await provider.query_material(bundle, view_id, mask.segment_id)

    results = await asyncio.gather(*(query(m) for m in queried))
    annotations = sorted(results, key=lambda a: a.segment_id)

    if not any(not a.unresolved for a in annotations):
        raise ViewUnusableError(f"view {view_id}: no segment could be assigned a material")

    material_map = paint_material_map((h, w), masks, annotations, library)
    logger.info(
        "Annotated view",
        extra={
            "view_id": view_id,
            "segments": len(queried),
            "skipped_small": skipped,
            "unresolved": sum(1 for a in annotations if a.unresolved),
        },
    )
    return ViewAnnotation(view_id=view_id, material_map=material_map, annotations=annotations, description=description)


def annotate_view(
    view_id: str,
    image: np.ndarray,
    masks: MaskSet,
    library: MaterialLibrary,
    provider: MaterialProvider,
    **options,
) -> np.ndarray:
    """Per-pixel material ordinal map for one view"""
    result = asyncio.run(annotate_view_async(view_id, image, masks, library, provider, **options))
    return result.material_map
