"""
Lift per-view material maps onto Gaussians by visibility-tested frequency voting
"""
from dataclasses import dataclass
from dataclasses import field as dc_field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from src.core.errors import PreconditionError, UnresolvedSceneError
from src.core.material_library import MaterialLibrary
from src.core.projection import inside_image, nearest_pixel, project_points
from src.core.rasterizer import FRONT_THRESHOLD, render_depth
from src.models.scene import (
    CameraModel,
    DepthMap,
    GaussianCloud,
    PropertyField,
    PropertyVote,
    Provenance,
)
from src.utils.logger import logger, stage_timer
from src.workers.pool import map_ordered

TOL_REL = 0.01
ABS_TOL_FRACTION = 1e-3  # of the scene extent
PROPAGATION_K = 8


def _abs_tol(cloud: GaussianCloud) -> float:
    return ABS_TOL_FRACTION * cloud.extent()


def visibility(
    cloud: GaussianCloud,
    cam: CameraModel,
    depth_map: DepthMap,
    tol_rel: float = TOL_REL,
    abs_tol: Optional[float] = None,
):
    """Vectorized visibility test; returns (visible (N,), pixels (N, 2))"""
    abs_tol = _abs_tol(cloud) if abs_tol is None else abs_tol
    uv, z, behind = project_points(cloud.positions, cam)
    px = nearest_pixel(uv)
    ok = ~behind & inside_image(px, cam)
    visible = np.zeros(cloud.count, dtype=bool)
    idx = np.flatnonzero(ok)
    surface = depth_map.depth[px[idx, 1], px[idx, 0]]
    visible[idx] = (z[idx] > 0) & (z[idx] <= surface * (1.0 + tol_rel) + abs_tol)
    return visible, px


def visible(
    cloud: GaussianCloud,
    gaussian_index: int,
    cam: CameraModel,
    depth_map: DepthMap,
    tol_rel: float = TOL_REL,
) -> bool:
    """Inside the image, in front of the camera, and no deeper than the surface"""
    if not 0 <= gaussian_index < cloud.count:
        raise PreconditionError(f"Gaussian index {gaussian_index} out of range")
    single = GaussianCloud.from_arrays(
        cloud.positions[gaussian_index:gaussian_index + 1],
        cloud.opacities[gaussian_index:gaussian_index + 1],
        cloud.scales[gaussian_index:gaussian_index + 1],
    )
    flags, _ = visibility(single, cam, depth_map, tol_rel, abs_tol=_abs_tol(cloud))
    return bool(flags[0])


def observation_matrix(
    cloud: GaussianCloud,
    cameras: Sequence[CameraModel],
    material_maps: Mapping[str, np.ndarray],
    depth_maps: Mapping[str, DepthMap],
    tol_rel: float = TOL_REL,
) -> np.ndarray:
    """(views, N) material ordinals seen per view, 0 where none; views in view_id order"""
    abs_tol = _abs_tol(cloud)
    ordered = sorted(cameras, key=lambda c: c.view_id)
    obs = np.zeros((len(ordered), cloud.count), dtype=np.int64)
    for row, cam in enumerate(ordered):
        labels = np.asarray(material_maps[cam.view_id])
        if labels.shape != (cam.height, cam.width):
            raise PreconditionError(
                f"material map for view {cam.view_id} is {labels.shape}, camera is {(cam.height, cam.width)}"
            )
        flags, px = visibility(cloud, cam, depth_maps[cam.view_id], tol_rel, abs_tol)
        idx = np.flatnonzero(flags)
        obs[row, idx] = labels[px[idx, 1], px[idx, 0]]
    return obs


def gather_votes(
    cloud: GaussianCloud,
    cameras: Sequence[CameraModel],
    material_maps: Mapping[str, np.ndarray],
    depth_maps: Mapping[str, DepthMap],
    tol_rel: float = TOL_REL,
) -> List[PropertyVote]:
    """One observation per view in which the Gaussian is visible on a labeled pixel"""
    obs = observation_matrix(cloud, cameras, material_maps, depth_maps, tol_rel)
    view_ids = [c.view_id for c in sorted(cameras, key=lambda c: c.view_id)]
    return [
        PropertyVote(
            gaussian_index=i,
            observations=tuple((view_ids[r], int(obs[r, i])) for r in np.flatnonzero(obs[:, i])),
            winner=None,
        )
        for i in range(cloud.count)
    ]


def preference_rank(scene_counts: Mapping[int, int], ordinals: Sequence[int]) -> Dict[int, int]:
    """Rank used to break count ties: higher scene frequency wins, then smaller ordinal"""
    ranked = sorted(set(ordinals), key=lambda a: (-scene_counts.get(a, 0), a))
    # Largest rank is the most preferred
    return {a: len(ranked) - i for i, a in enumerate(ranked)}


def vote(observations: Sequence, scene_counts: Optional[Mapping[int, int]] = None) -> Optional[int]:
    """argmax over observation counts; None when there is nothing to count"""
    labels = [o[1] if isinstance(o, tuple) else o for o in observations]
    if not labels:
        return None
    counts: Dict[int, int] = {}
    for a in labels:
        counts[a] = counts.get(a, 0) + 1
    scene_counts = scene_counts or {}
    return min(counts, key=lambda a: (-counts[a], -scene_counts.get(a, 0), a))


def vote_all(obs: np.ndarray, num_materials: int) -> np.ndarray:
    """Vectorized vote over an observation matrix; 0 = unresolved"""
    n = obs.shape[1]
    counts = np.zeros((n, num_materials + 1), dtype=np.int64)
    rows, cols = np.nonzero(obs)
    np.add.at(counts, (cols, obs[rows, cols]), 1)
    counts[:, 0] = 0

    scene = counts.sum(axis=0)
    rank = preference_rank({a: int(scene[a]) for a in range(1, num_materials + 1)}, range(1, num_materials + 1))
    prefs = np.zeros(num_materials + 1, dtype=np.int64)
    for a, r in rank.items():
        prefs[a] = r
    # Counts dominate; the rank (< num_materials + 1) only separates equal counts
    score = counts * (num_materials + 1) + prefs
    score[counts == 0] = -1
    winner = np.argmax(score, axis=1)
    winner[counts.max(axis=1) == 0] = 0
    return winner


def first_view_labels(obs: np.ndarray) -> np.ndarray:
    """Single-view ablation: the first labeled observation in view_id order"""
    if obs.shape[0] == 0:
        return np.zeros(obs.shape[1], dtype=np.int64)
    labeled = obs != 0
    first = np.argmax(labeled, axis=0)
    winner = obs[first, np.arange(obs.shape[1])]
    winner[~labeled.any(axis=0)] = 0
    return winner


def build_field(
    material: np.ndarray,
    provenance: np.ndarray,
    source: np.ndarray,
    library: MaterialLibrary,
) -> PropertyField:
    """Attach nominal scalars from the library to material ordinals"""
    size = len(library) + 1
    tables = {name: np.full(size, np.nan) for name in ("density", "youngs_modulus", "poisson_ratio", "friction", "yield_stress")}
    for material_id in library.candidates():
        record = library.lookup(material_id)
        o = library.ordinal(material_id)
        tables["density"][o] = record.density.nominal
        tables["youngs_modulus"][o] = record.youngs_modulus.nominal
        tables["poisson_ratio"][o] = record.poisson_ratio
        tables["friction"][o] = record.friction_mu
        tables["yield_stress"][o] = record.yield_stress
    material = np.asarray(material, dtype=np.int64)
    return PropertyField(
        material=material,
        provenance=np.asarray(provenance, dtype=np.uint8),
        source=np.asarray(source, dtype=np.int64),
        **{name: table[material] for name, table in tables.items()},
    )


def propagate(
    field: PropertyField,
    cloud: GaussianCloud,
    library: MaterialLibrary,
    k: int = PROPAGATION_K,
) -> PropertyField:
    """Each unresolved Gaussian takes the majority material of its k nearest resolved neighbors"""
    unresolved = field.unresolved_indices()
    if len(unresolved) == 0:
        return field
    resolved = np.flatnonzero(field.provenance != Provenance.UNRESOLVED)
    if len(resolved) == 0:
        raise UnresolvedSceneError("cannot propagate materials: no Gaussian is resolved", unresolved)

    k = min(k, len(resolved))
    tree = cKDTree(cloud.positions[resolved])
    _, nn = tree.query(cloud.positions[unresolved], k=k)
    nn = np.asarray(nn).reshape(len(unresolved), k)
    neighbor_materials = field.material[resolved][nn]

    scene_counts = dict(zip(*np.unique(field.material[resolved], return_counts=True)))
    scene_counts = {int(a): int(c) for a, c in scene_counts.items()}

    material = field.material.copy()
    provenance = field.provenance.copy()
    source = field.source.copy()
    for row, g in enumerate(unresolved):
        winner = vote(neighbor_materials[row].tolist(), scene_counts)
        # Neighbors come back nearest first; the nearest carrier is the named source
        pick = int(np.flatnonzero(neighbor_materials[row] == winner)[0])
        material[g] = winner
        provenance[g] = Provenance.PROPAGATED
        source[g] = resolved[nn[row, pick]]

    logger.info("Propagated materials", extra={"propagated": int(len(unresolved)), "resolved": int(len(resolved))})
    return build_field(material, provenance, source, library)


@dataclass
class LiftResult:
    field: PropertyField
    votes: List[PropertyVote]
    depth_maps: Dict[str, DepthMap] = dc_field(default_factory=dict)


def lift(
    cloud: GaussianCloud,
    cameras: Sequence[CameraModel],
    material_maps: Mapping[str, np.ndarray],
    library: MaterialLibrary,
    tol_rel: float = TOL_REL,
    front_threshold: float = FRONT_THRESHOLD,
    voting: str = "frequency",
    knn: int = PROPAGATION_K,
    workers: int = 1,
    depth_maps: Optional[Mapping[str, DepthMap]] = None,
) -> LiftResult:
    """render_depth per view -> gather votes -> vote -> library scalars -> propagate"""
    cameras = sorted(cameras, key=lambda c: c.view_id)
    missing = [c.view_id for c in cameras if c.view_id not in material_maps]
    if missing:
        raise PreconditionError(f"no material map for views {missing}")

    depth_maps = dict(depth_maps or {})
    to_render = [c for c in cameras if c.view_id not in depth_maps]
    with stage_timer("render_depth", views=len(to_render)):
        rendered = map_ordered(lambda cam: render_depth(cloud, cam, front_threshold), to_render, workers)
    depth_maps.update({d.view_id: d for d in rendered})

    with stage_timer("vote", gaussians=cloud.count, views=len(cameras)):
        obs = observation_matrix(cloud, cameras, material_maps, depth_maps, tol_rel)
        if obs.size and (obs.min() < 0 or obs.max() > len(library)):
            raise PreconditionError("material maps carry ordinals outside the library")
        if voting == "frequency":
            winners = vote_all(obs, len(library))
        elif voting == "single_view":
            winners = first_view_labels(obs)
        else:
            raise PreconditionError(f"unknown voting mode {voting!r}")

    provenance = np.where(winners > 0, Provenance.VOTED, Provenance.UNRESOLVED).astype(np.uint8)
    field = build_field(winners, provenance, np.full(cloud.count, -1, dtype=np.int64), library)
    if cloud.count:
        field = propagate(field, cloud, library, knn)

    view_ids = [c.view_id for c in cameras]
    votes = [
        PropertyVote(
            gaussian_index=i,
            observations=tuple((view_ids[r], int(obs[r, i])) for r in np.flatnonzero(obs[:, i])),
            winner=int(winners[i]) if winners[i] else None,
        )
        for i in range(cloud.count)
    ]
    logger.info("Lifted materials", extra=field.provenance_counts())
    return LiftResult(field=field, votes=votes, depth_maps=depth_maps)
