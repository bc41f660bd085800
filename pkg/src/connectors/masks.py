"""
Mask sets stored as 16-bit label PNGs with `segment_id iou stability` sidecars
"""
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from src.connectors.images import read_label_png, write_label_png
from src.core.errors import MaskError
from src.models.scene import CameraModel, Mask, MaskSet

PathLike = Union[str, Path]


def read_sidecar(path: PathLike) -> Dict[int, Tuple[float, float]]:
    metadata: Dict[int, Tuple[float, float]] = {}
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            segment_id, iou, stability = int(parts[0]), float(parts[1]), float(parts[2])
        except (IndexError, ValueError):
            raise MaskError(f"{path}:{number}: expected `segment_id iou stability`")
        if segment_id in metadata:
            raise MaskError(f"{path}:{number}: duplicate segment id {segment_id}")
        if not (0.0 <= iou <= 1.0 and 0.0 <= stability <= 1.0):
            raise MaskError(f"{path}:{number}: iou/stability must lie in [0, 1]")
        metadata[segment_id] = (iou, stability)
    return metadata


def load_mask_set(
    paths: Union[PathLike, Sequence[PathLike]],
    view_id: str,
    camera: Optional[CameraModel] = None,
    metadata_path: Optional[PathLike] = None,
) -> MaskSet:
    """
    One path: an integer-labeled image. Several paths: one binary image per
    segment, numbered from 1 in the given order.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    paths = [Path(p) for p in paths]
    if not paths:
        raise MaskError(f"view {view_id}: no mask files given")

    if metadata_path is None:
        candidate = paths[0].with_suffix(".txt")
        metadata_path = candidate if candidate.exists() else None
    metadata = read_sidecar(metadata_path) if metadata_path is not None else {}

    if len(paths) == 1:
        labels = read_label_png(paths[0])
        segments = [(int(s), labels == s) for s in np.unique(labels) if s != 0]
    else:
        segments = [(i, read_label_png(p) != 0) for i, p in enumerate(paths, 1)]

    masks = []
    for segment_id, bitmap in segments:
        if camera is not None and bitmap.shape != (camera.height, camera.width):
            raise MaskError(
                f"view {view_id}: mask is {bitmap.shape[1]}x{bitmap.shape[0]}, "
                f"camera is {camera.width}x{camera.height}"
            )
        iou, stability = metadata.get(segment_id, (1.0, 1.0))
        masks.append(Mask(segment_id=segment_id, bitmap=bitmap, predicted_iou=iou, stability=stability))
    if camera is not None and not masks:
        shape = read_label_png(paths[0]).shape
        if shape != (camera.height, camera.width):
            raise MaskError(f"view {view_id}: mask is {shape[1]}x{shape[0]}, camera is {camera.width}x{camera.height}")
    return MaskSet(view_id=view_id, masks=tuple(masks))


def mask_set_labels(mask_set: MaskSet, shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Flatten to a label image; larger masks are painted first so small parts stay visible"""
    if shape is None:
        if not mask_set.masks:
            raise MaskError(f"view {mask_set.view_id}: empty mask set needs an explicit shape")
        shape = mask_set.masks[0].bitmap.shape
    labels = np.zeros(shape, dtype=np.uint16)
    for mask in sorted(mask_set.masks, key=lambda m: (-m.area, m.segment_id)):
        labels[mask.bitmap] = mask.segment_id
    return labels


def write_mask_set(mask_set: MaskSet, directory: PathLike, shape: Optional[Tuple[int, int]] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    png = directory / f"{mask_set.view_id}.png"
    write_label_png(png, mask_set_labels(mask_set, shape))
    lines = [f"{m.segment_id} {m.predicted_iou!r} {m.stability!r}" for m in sorted(mask_set.masks, key=lambda m: m.segment_id)]
    (directory / f"{mask_set.view_id}.txt").write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return png
