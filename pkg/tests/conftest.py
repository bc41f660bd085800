"""
Shared synthetic scenes: two boxes of Gaussians seen from a ring of cameras
"""
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from src.connectors.gaussian_ply import write_gaussian_ply
from src.connectors.images import encode_png, write_label_png
from src.core.lifting import build_field
from src.core.material_library import default_library
from src.core.rasterizer import rasterize
from src.models.scene import CameraModel, GaussianCloud, Provenance

BOX_HALF = 0.05
BOX_OFFSET = 0.07  # box centers at +-x, leaving a 4 cm gap
GAUSSIAN_SIGMA = 0.003


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)):
    """World -> camera (x right, y down, z forward)"""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    return rotation, -rotation @ eye


def ring_cameras(count=10, radius=0.6, height=0.25, size=64, focal=80.0):
    cameras = []
    for i in range(count):
        angle = 2.0 * np.pi * i / count + 0.3
        eye = (radius * np.cos(angle), radius * np.sin(angle), height)
        rotation, translation = look_at(eye)
        cameras.append(
            CameraModel.pinhole(
                focal, focal, (size - 1) / 2.0, (size - 1) / 2.0, size, size,
                rotation=rotation, translation=translation, view_id=f"v{i:02d}",
            )
        )
    return cameras


def two_box_cloud(per_box=10000, seed=0):
    """Returns (cloud, box index per Gaussian: 0 = left box, 1 = right box)"""
    rng = np.random.default_rng(seed)
    left = rng.uniform(-BOX_HALF, BOX_HALF, (per_box, 3)) + [-BOX_OFFSET, 0.0, 0.0]
    right = rng.uniform(-BOX_HALF, BOX_HALF, (per_box, 3)) + [BOX_OFFSET, 0.0, 0.0]
    positions = np.concatenate([left, right])
    n = len(positions)
    cloud = GaussianCloud.from_arrays(
        positions,
        np.full(n, 0.95),
        np.full((n, 3), GAUSSIAN_SIGMA),
    )
    return cloud, np.repeat([0, 1], per_box)


def truth_field(boxes, library, materials=("oak", "aluminum")):
    ordinals = np.array([library.ordinal(m) for m in materials])[boxes]
    n = len(boxes)
    return build_field(ordinals, np.full(n, Provenance.VOTED, dtype=np.uint8), np.full(n, -1), library)


def material_maps(cloud, ordinals, cameras, library):
    """Perfect per-view material maps: composited ground-truth labels"""
    maps = {}
    for cam in cameras:
        raster = rasterize(cloud, cam, labels=ordinals, num_labels=len(library))
        labels = np.argmax(raster.label_weights, axis=2).astype(np.uint16)
        labels[raster.accum < 0.5] = 0
        maps[cam.view_id] = labels
    return maps


@pytest.fixture(scope="session")
def library():
    """Packaged seed library"""
    return default_library()


@pytest.fixture(scope="session")
def two_box_scene(library):
    """20k-Gaussian two-box scene, 10 ring views at 64x64, perfect material maps"""
    cloud, boxes = two_box_cloud()
    truth = truth_field(boxes, library)
    cameras = ring_cameras()
    maps = material_maps(cloud, truth.material, cameras, library)
    return {"cloud": cloud, "truth": truth, "cameras": cameras, "maps": maps}


def _c2w(cam):
    c2w = np.eye(4)
    c2w[:3, :3] = cam.rotation.T
    c2w[:3, 3] = cam.center
    return c2w.tolist()


def write_project(root: Path, per_box=1500, views=3, size=32, focal=40.0, seed=1) -> Path:
    """Fixture-mode project on disk; returns the config path"""
    library = default_library()
    cloud, boxes = two_box_cloud(per_box, seed)
    cameras = ring_cameras(views, size=size, focal=focal)
    truth = truth_field(boxes, library)

    (root / "scene.ply").write_bytes(write_gaussian_ply(cloud))
    transforms = {
        "w": size,
        "h": size,
        "fl_x": focal,
        "fl_y": focal,
        "cx": (size - 1) / 2.0,
        "cy": (size - 1) / 2.0,
        "frames": [{"file_path": f"images/{cam.view_id}.png", "transform_matrix": _c2w(cam)} for cam in cameras],
    }
    (root / "transforms.json").write_text(json.dumps(transforms), encoding="utf-8")

    # Segment ids follow the boxes: 1 = left (oak), 2 = right (aluminum)
    segments = material_maps(cloud, (boxes + 1).astype(np.int64), cameras, library)
    for directory in ("images", "masks", "fixtures"):
        (root / directory).mkdir(parents=True, exist_ok=True)
    palette = np.array([[30, 30, 30], [160, 110, 60], [200, 200, 210]], dtype=np.uint8)
    for cam in cameras:
        labels = segments[cam.view_id]
        (root / "images" / f"{cam.view_id}.png").write_bytes(encode_png(palette[np.minimum(labels, 2)]))
        write_label_png(root / "masks" / f"{cam.view_id}.png", labels)
        (root / "fixtures" / f"{cam.view_id}.txt").write_text("1 oak\n2 aluminum\n", encoding="utf-8")

    config = {
        "scene": "scene.ply",
        "cameras": "transforms.json",
        "images_dir": "images",
        "masks_dir": "masks",
        "fixtures_dir": "fixtures",
        "output_dir": "out",
        "mode": "fixture",
        "view_count": views,
        "voxel_size": 0.01,
    }
    path = root / "gsprop.yaml"
    path.write_text(yaml.safe_dump(config), encoding="utf-8")
    return path


@pytest.fixture
def project(tmp_path):
    """Small fixture-mode project: 3k Gaussians, 3 views at 32x32"""
    return write_project(tmp_path)
