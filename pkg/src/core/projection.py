"""
Pinhole projection of world points into a view
"""
from typing import NamedTuple

import numpy as np

from src.models.scene import CameraModel

Z_NEAR = 1e-4


class Projection(NamedTuple):
    u: float
    v: float
    z_cam: float
    behind: bool


def project_point(p, cam: CameraModel) -> Projection:
    """x_cam = R p + t, then perspective divide of K x_cam"""
    x_cam = cam.rotation @ np.asarray(p, dtype=np.float64) + cam.translation
    z = float(x_cam[2])
    if z <= Z_NEAR:
        return Projection(float("nan"), float("nan"), z, True)
    uvw = cam.intrinsics @ x_cam
    return Projection(float(uvw[0] / uvw[2]), float(uvw[1] / uvw[2]), z, False)


def project_points(points: np.ndarray, cam: CameraModel):
    """Vectorized project_point; returns (uv (N, 2), z (N,), behind (N,))"""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    x_cam = points @ cam.rotation.T + cam.translation
    z = x_cam[:, 2]
    behind = z <= Z_NEAR
    uvw = x_cam @ cam.intrinsics.T
    uv = np.full((len(points), 2), np.nan)
    front = ~behind
    uv[front] = uvw[front, :2] / uvw[front, 2:3]
    return uv, z, behind


def camera_points(points: np.ndarray, cam: CameraModel) -> np.ndarray:
    return np.asarray(points, dtype=np.float64).reshape(-1, 3) @ cam.rotation.T + cam.translation


def nearest_pixel(uv: np.ndarray) -> np.ndarray:
    """Pixel centers sit on integer coordinates; NaN maps off-image"""
    uv = np.clip(np.nan_to_num(uv, nan=-2.0), -2.0, 1e9)
    return np.floor(uv + 0.5).astype(np.int64)


def inside_image(px: np.ndarray, cam: CameraModel) -> np.ndarray:
    return (px[:, 0] >= 0) & (px[:, 0] < cam.width) & (px[:, 1] >= 0) & (px[:, 1] < cam.height)
