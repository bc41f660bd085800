"""
Reference (non-real-time) Gaussian splatter used for depth and label maps
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from src.core.projection import Z_NEAR, camera_points
from src.models.scene import CameraModel, DepthMap, GaussianCloud

FRONT_THRESHOLD = 0.5
SCREEN_DILATION = 0.3  # px^2, low-pass filter on the 2D covariance
FOOTPRINT_SIGMAS = 3.0
MIN_ALPHA = 1.0 / 255.0


@dataclass
class Footprints:
    """Screen-space footprint of every Gaussian in front of the camera"""

    index: np.ndarray  # Gaussian indices, sorted front to back
    uv: np.ndarray
    z: np.ndarray
    conic: np.ndarray  # (a, b, c) of the inverse 2D covariance
    radius: np.ndarray
    opacity: np.ndarray


@dataclass
class Raster:
    depth: np.ndarray
    accum: np.ndarray
    front_index: np.ndarray
    label_weights: Optional[np.ndarray] = None


def covariances(cloud: GaussianCloud) -> np.ndarray:
    """Sigma = R S S^T R^T per Gaussian"""
    rot = Rotation.from_quat(cloud.rotations[:, [1, 2, 3, 0]]).as_matrix()
    m = rot * cloud.scales[:, None, :]
    return m @ np.transpose(m, (0, 2, 1))


def footprints(cloud: GaussianCloud, cam: CameraModel) -> Footprints:
    """EWA projection: Sigma' = J W Sigma W^T J^T, plus the screen dilation"""
    if cloud.count == 0:
        empty = np.zeros(0)
        return Footprints(np.zeros(0, np.int64), np.zeros((0, 2)), empty, np.zeros((0, 3)), empty, empty)

    x_cam = camera_points(cloud.positions, cam)
    keep = np.flatnonzero(x_cam[:, 2] > Z_NEAR)
    x_cam = x_cam[keep]
    x, y, z = x_cam[:, 0], x_cam[:, 1], x_cam[:, 2]

    k = cam.intrinsics
    u = (k[0, 0] * x + k[0, 1] * y) / z + k[0, 2]
    v = k[1, 1] * y / z + k[1, 2]

    jac = np.zeros((len(keep), 2, 3))
    jac[:, 0, 0] = k[0, 0] / z
    jac[:, 0, 1] = k[0, 1] / z
    jac[:, 0, 2] = -(k[0, 0] * x + k[0, 1] * y) / z**2
    jac[:, 1, 1] = k[1, 1] / z
    jac[:, 1, 2] = -k[1, 1] * y / z**2

    sigma_cam = cam.rotation @ covariances(cloud)[keep] @ cam.rotation.T
    cov2d = jac @ sigma_cam @ np.transpose(jac, (0, 2, 1))
    a = cov2d[:, 0, 0] + SCREEN_DILATION
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1] + SCREEN_DILATION
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)

    mid = 0.5 * (a + c)
    lambda_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = FOOTPRINT_SIGMAS * np.sqrt(lambda_max)

    uv = np.stack([u, v], axis=1)
    on_screen = (
        (u + radius >= -0.5) & (u - radius <= cam.width - 0.5)
        & (v + radius >= -0.5) & (v - radius <= cam.height - 0.5)
    )
    # Stable sort keeps ties in index order
    order = np.flatnonzero(on_screen)
    order = order[np.argsort(z[order], kind="stable")]
    return Footprints(
        index=keep[order],
        uv=uv[order],
        z=z[order],
        conic=conic[order],
        radius=radius[order],
        opacity=cloud.opacities[keep][order],
    )


def rasterize(
    cloud: GaussianCloud,
    cam: CameraModel,
    front_threshold: float = FRONT_THRESHOLD,
    labels: Optional[np.ndarray] = None,
    num_labels: int = 0,
) -> Raster:
    """
    Front-to-back compositing; depth is the z at which accumulated opacity
    first reaches front_threshold. With labels, one-hot label vectors are
    composited with the same weights.
    """
    h, w = cam.height, cam.width
    transmittance = np.ones((h, w))
    depth = np.full((h, w), np.inf)
    front_index = np.full((h, w), -1, dtype=np.int64)
    label_weights = np.zeros((h, w, num_labels + 1)) if labels is not None else None

    fp = footprints(cloud, cam)
    for i in range(len(fp.index)):
        u, v = fp.uv[i]
        r = fp.radius[i]
        x0, x1 = max(int(np.ceil(u - r)), 0), min(int(np.floor(u + r)), w - 1)
        y0, y1 = max(int(np.ceil(v - r)), 0), min(int(np.floor(v + r)), h - 1)
        if x0 > x1 or y0 > y1:
            continue

        dx = np.arange(x0, x1 + 1) - u
        dy = (np.arange(y0, y1 + 1) - v)[:, None]
        ca, cb, cc = fp.conic[i]
        power = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
        alpha = fp.opacity[i] * np.exp(-0.5 * power)
        alpha[(power > FOOTPRINT_SIGMAS**2) | (alpha < MIN_ALPHA)] = 0.0
        if not alpha.any():
            continue

        t_patch = transmittance[y0:y1 + 1, x0:x1 + 1]
        before = 1.0 - t_patch
        after_t = t_patch * (1.0 - alpha)
        crossed = (before < front_threshold) & (1.0 - after_t >= front_threshold)
        if crossed.any():
            depth[y0:y1 + 1, x0:x1 + 1][crossed] = fp.z[i]
            front_index[y0:y1 + 1, x0:x1 + 1][crossed] = fp.index[i]
        if label_weights is not None:
            label_weights[y0:y1 + 1, x0:x1 + 1, labels[fp.index[i]]] += t_patch * alpha
        transmittance[y0:y1 + 1, x0:x1 + 1] = after_t

    return Raster(depth=depth, accum=1.0 - transmittance, front_index=front_index, label_weights=label_weights)


def render_depth(cloud: GaussianCloud, cam: CameraModel, front_threshold: float = FRONT_THRESHOLD) -> DepthMap:
    raster = rasterize(cloud, cam, front_threshold)
    return DepthMap(
        view_id=cam.view_id,
        depth=raster.depth,
        opacity_accum=raster.accum,
        front_index=raster.front_index,
    )
