"""
Mask culling, level selection and the RLE codec used by the segmentation endpoint
"""
from typing import Any, Dict, List, Sequence

import numpy as np

from src.core.errors import MaskError
from src.models.scene import Mask, MaskSet
from src.utils.logger import logger

IOU_MIN = 0.88
STABILITY_MIN = 0.95
OVERLAP_MAX = 0.7


def pairwise_iou(bitmaps: Sequence[np.ndarray]) -> np.ndarray:
    if not bitmaps:
        return np.zeros((0, 0))
    flat = np.stack([b.reshape(-1) for b in bitmaps]).astype(np.float64)
    inter = flat @ flat.T
    area = flat.sum(axis=1)
    union = area[:, None] + area[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def filter_masks(
    raw: MaskSet,
    iou_min: float = IOU_MIN,
    stability_min: float = STABILITY_MIN,
    overlap_max: float = OVERLAP_MAX,
) -> MaskSet:
    """
    Drop low-quality masks, then greedy overlap suppression in descending
    predicted_iou. Survivors are renumbered 1..K in their original id order.
    """
    candidates = [m for m in raw.masks if m.predicted_iou >= iou_min and m.stability >= stability_min]
    order = sorted(range(len(candidates)), key=lambda i: (-candidates[i].predicted_iou, candidates[i].segment_id))
    iou = pairwise_iou([m.bitmap for m in candidates])

    kept: List[int] = []
    for i in order:
        if all(iou[i, j] <= overlap_max for j in kept):
            kept.append(i)

    survivors = sorted((candidates[i] for i in kept), key=lambda m: m.segment_id)
    masks = tuple(
        Mask(segment_id=n, bitmap=m.bitmap, predicted_iou=m.predicted_iou, stability=m.stability)
        for n, m in enumerate(survivors, 1)
    )
    logger.debug(
        "Filtered masks",
        extra={"view_id": raw.view_id, "raw": len(raw), "thresholded": len(candidates), "kept": len(masks)},
    )
    return MaskSet(view_id=raw.view_id, masks=masks)


def select_level(mask_hierarchy: Sequence[MaskSet]) -> MaskSet:
    """Ordered coarse to fine; the middle (part) level wins"""
    if not mask_hierarchy:
        raise MaskError("empty mask hierarchy")
    return mask_hierarchy[len(mask_hierarchy) // 2]


def mask_to_rle(bitmap: np.ndarray) -> Dict[str, Any]:
    """Uncompressed column-major RLE; counts start with a run of zeros"""
    h, w = bitmap.shape
    flat = np.asarray(bitmap, dtype=bool).reshape(-1, order="F")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(edges).tolist()
    if flat.size and flat[0]:
        counts = [0] + counts
    return {"size": [h, w], "counts": counts}


def rle_to_mask(rle: Dict[str, Any]) -> np.ndarray:
    try:
        h, w = (int(v) for v in rle["size"])
        counts = [int(c) for c in rle["counts"]]
    except (KeyError, TypeError, ValueError) as e:
        raise MaskError(f"malformed RLE: {e}")
    if sum(counts) != h * w:
        raise MaskError(f"RLE covers {sum(counts)} pixels, expected {h * w}")
    values = np.arange(len(counts)) % 2 == 1
    flat = np.repeat(values, counts)
    return flat.reshape((h, w), order="F")
