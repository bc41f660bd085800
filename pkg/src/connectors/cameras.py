"""
Camera parsing for transforms-style JSON and COLMAP text models
"""
import json
import math
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from src.core.errors import CameraFormatError, PreconditionError
from src.models.scene import CameraModel
from src.utils.logger import logger

CameraFormat = Literal["transforms_json", "colmap_text"]

ROTATION_TOL = 1e-4
PINHOLE_MODELS = {"SIMPLE_PINHOLE", "PINHOLE"}

# Camera-frame axis flip between OpenGL (y up, looking down -z) and OpenCV
_OPENGL_TO_OPENCV = np.diag([1.0, -1.0, -1.0])


def _orthonormalize(r: np.ndarray, view_id: str) -> np.ndarray:
    """Reject rotations off by more than ROTATION_TOL, snap the rest onto SO(3)"""
    deviation = float(np.max(np.abs(r.T @ r - np.eye(3))))
    if deviation > ROTATION_TOL or np.linalg.det(r) <= 0:
        raise CameraFormatError(f"view {view_id}: rotation is not orthonormal (max deviation {deviation:.2e})")
    u, _, vt = np.linalg.svd(r)
    return u @ vt


def _make_camera(k, r, t, width, height, view_id) -> CameraModel:
    try:
        return CameraModel(
            intrinsics=np.asarray(k, dtype=np.float64),
            rotation=_orthonormalize(np.asarray(r, dtype=np.float64), view_id),
            translation=np.asarray(t, dtype=np.float64).reshape(3),
            width=int(width),
            height=int(height),
            view_id=str(view_id),
        )
    except PreconditionError as e:
        raise CameraFormatError(e.message)


def _parse_transforms(data: bytes, convention: str) -> List[CameraModel]:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CameraFormatError(f"transforms document is not valid JSON: {e}")
    frames = doc.get("frames")
    if not isinstance(frames, list):
        raise CameraFormatError("transforms document has no 'frames' list")

    cameras = []
    seen = set()
    for index, frame in enumerate(frames):
        merged = {**doc, **frame}
        try:
            w, h = int(merged["w"]), int(merged["h"])
        except KeyError as e:
            raise CameraFormatError(f"frame {index}: missing field {e.args[0]}")
        fl_x = merged.get("fl_x")
        if fl_x is None and "camera_angle_x" in merged:
            fl_x = 0.5 * w / math.tan(0.5 * float(merged["camera_angle_x"]))
        if fl_x is None:
            raise CameraFormatError(f"frame {index}: missing field fl_x")
        fl_y = merged.get("fl_y", fl_x)
        cx = merged.get("cx", w / 2.0)
        cy = merged.get("cy", h / 2.0)
        if "transform_matrix" not in frame:
            raise CameraFormatError(f"frame {index}: missing field transform_matrix")
        c2w = np.asarray(frame["transform_matrix"], dtype=np.float64)
        if c2w.shape not in ((4, 4), (3, 4)):
            raise CameraFormatError(f"frame {index}: transform_matrix must be 4x4")

        view_id = Path(frame["file_path"]).stem if frame.get("file_path") else str(index)
        if view_id in seen:
            view_id = f"{view_id}_{index}"
        seen.add(view_id)

        rot_c2w = c2w[:3, :3]
        if convention == "opengl":
            rot_c2w = rot_c2w @ _OPENGL_TO_OPENCV
        center = c2w[:3, 3]
        # Invert the rigid transform: x_cam = R^T (x - c)
        r = rot_c2w.T
        t = -r @ center
        k = [[float(fl_x), 0.0, float(cx)], [0.0, float(fl_y), float(cy)], [0.0, 0.0, 1.0]]
        cameras.append(_make_camera(k, r, t, w, h, view_id))
    return cameras


def _data_lines(text: str) -> List[str]:
    return [line.strip() for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]


def _parse_colmap(cameras_txt: bytes, images_txt: bytes) -> List[CameraModel]:
    intrinsics = {}
    for line in _data_lines(cameras_txt.decode("utf-8")):
        parts = line.split()
        if len(parts) < 4:
            raise CameraFormatError(f"cameras.txt: malformed line {line!r}")
        cam_id, model, width, height = parts[0], parts[1], int(parts[2]), int(parts[3])
        params = [float(p) for p in parts[4:]]
        if model not in PINHOLE_MODELS:
            raise CameraFormatError(f"cameras.txt: camera {cam_id} uses unsupported model {model} (pinhole only)")
        if model == "SIMPLE_PINHOLE":
            if len(params) != 3:
                raise CameraFormatError(f"cameras.txt: camera {cam_id} needs f, cx, cy")
            fx = fy = params[0]
            cx, cy = params[1], params[2]
        else:
            if len(params) != 4:
                raise CameraFormatError(f"cameras.txt: camera {cam_id} needs fx, fy, cx, cy")
            fx, fy, cx, cy = params
        intrinsics[cam_id] = ([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]], width, height)

    # images.txt alternates pose lines and 2D point lines; the point line may be empty
    lines = [l for l in images_txt.decode("utf-8").splitlines() if not l.lstrip().startswith("#")]
    cameras = []
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        parts = line.split()
        if len(parts) < 10:
            raise CameraFormatError(f"images.txt: malformed pose line {line!r}")
        qw, qx, qy, qz = (float(v) for v in parts[1:5])
        t = [float(v) for v in parts[5:8]]
        cam_id, name = parts[8], " ".join(parts[9:])
        if cam_id not in intrinsics:
            raise CameraFormatError(f"images.txt: image {name} references unknown camera {cam_id}")
        quat = np.array([qx, qy, qz, qw])
        norm = np.linalg.norm(quat)
        if abs(norm - 1.0) > ROTATION_TOL:
            raise CameraFormatError(f"images.txt: image {name} quaternion is not unit (norm {norm:.6f})")
        r = Rotation.from_quat(quat).as_matrix()
        k, width, height = intrinsics[cam_id]
        cameras.append(_make_camera(k, r, t, width, height, Path(name).stem))
        i += 1  # skip POINTS2D line
    return cameras


def parse_cameras(
    data: Union[bytes, Tuple[bytes, bytes]],
    format: str,
    convention: str = "opencv",
) -> List[CameraModel]:
    """Parse camera files; stored extrinsics are always world -> camera"""
    if format == "transforms_json":
        if not isinstance(data, (bytes, bytearray)):
            raise CameraFormatError("transforms_json expects a single document")
        if convention not in ("opencv", "opengl"):
            raise CameraFormatError(f"unknown camera convention {convention!r}")
        cameras = _parse_transforms(bytes(data), convention)
    elif format == "colmap_text":
        if not isinstance(data, tuple) or len(data) != 2:
            raise CameraFormatError("colmap_text expects (cameras.txt, images.txt) contents")
        cameras = _parse_colmap(*data)
    else:
        raise CameraFormatError(f"unknown camera format {format!r}")

    ids = [c.view_id for c in cameras]
    if len(set(ids)) != len(ids):
        raise CameraFormatError("camera view ids are not unique")
    logger.debug("Parsed cameras", extra={"format": format, "views": len(cameras)})
    return cameras


def load_cameras(path: Path, format: Optional[str] = None, convention: str = "opencv") -> List[CameraModel]:
    """File/directory front-end that autodetects the format"""
    path = Path(path)
    if format is None:
        if path.is_dir() and (path / "cameras.txt").exists():
            format = "colmap_text"
        elif path.is_dir() and (path / "transforms.json").exists():
            format, path = "transforms_json", path / "transforms.json"
        elif path.suffix == ".json":
            format = "transforms_json"
        else:
            raise CameraFormatError(f"cannot detect camera format of {path}")
    try:
        if format == "colmap_text":
            root = path if path.is_dir() else path.parent
            data = ((root / "cameras.txt").read_bytes(), (root / "images.txt").read_bytes())
        else:
            data = path.read_bytes()
    except OSError as e:
        raise CameraFormatError(f"cannot read cameras from {path}: {e}")
    return parse_cameras(data, format, convention=convention)
