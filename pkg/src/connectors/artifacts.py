"""
Intermediate stage artifacts: depth maps, votes, material maps and annotations
"""
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Union

import numpy as np

from src.connectors.images import read_label_png, write_label_png
from src.core.errors import DataError
from src.models.scene import DepthMap, PropertyVote
from src.models.schemas import SegmentAnnotation

PathLike = Union[str, Path]

DEPTH_MAGIC = b"GSDEPTH1"
_DEPTH_HEADER = struct.Struct("<8sII")


def depth_map_bytes(depth_map: DepthMap) -> bytes:
    """GSDEPTH1, width, height (u32 LE), then float32 depth and float32 opacity rows"""
    h, w = depth_map.depth.shape
    return (
        _DEPTH_HEADER.pack(DEPTH_MAGIC, w, h)
        + depth_map.depth.astype("<f4").tobytes()
        + depth_map.opacity_accum.astype("<f4").tobytes()
    )


def write_depth_map(directory: PathLike, depth_map: DepthMap) -> Path:
    path = Path(directory) / f"{depth_map.view_id}.depth"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(depth_map_bytes(depth_map))
    return path


def votes_text(votes: Iterable[PropertyVote]) -> str:
    """One `gaussian_index view_id ordinal` line per observation"""
    lines = []
    for vote in votes:
        lines.extend(f"{vote.gaussian_index} {view} {ordinal}" for view, ordinal in vote.observations)
    return "".join(line + "\n" for line in lines)


def write_material_map(directory: PathLike, view_id: str, material_map: np.ndarray) -> Path:
    path = Path(directory) / f"{view_id}.png"
    write_label_png(path, material_map)
    return path


def read_material_maps(directory: PathLike, view_ids: Iterable[str]) -> Dict[str, np.ndarray]:
    directory = Path(directory)
    maps = {}
    for view_id in view_ids:
        path = directory / f"{view_id}.png"
        if not path.exists():
            raise DataError(f"no material map for view {view_id} at {path}; run `annotate` first")
        maps[view_id] = read_label_png(path)
    return maps


def annotations_text(annotations: List[SegmentAnnotation]) -> str:
    """Same `segment_id material_id confidence` layout the fixture provider reads"""
    lines = []
    for a in annotations:
        if a.unresolved:
            lines.append(f"# {a.segment_id} unresolved {a.raw_material_text!r}")
        else:
            lines.append(f"{a.segment_id} {a.material_id} {a.confidence!r}")
    return "".join(line + "\n" for line in lines)
