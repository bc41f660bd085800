"""
Mass, per-point hardness and grasping-force planning
"""
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.calibration import CalibrationCurve, to_normalized_command
from src.core.errors import PhysicsInputError, PreconditionError, UnresolvedSceneError
from src.core.material_library import MaterialLibrary, unified_hardness
from src.core.volumes import VOXEL_SIZE, estimate_volumes
from src.models.scene import CameraModel, DepthMap, GaussianCloud, Part, PartDecomposition, PropertyField
from src.models.schemas import GraspPlan, GripperProfile, SurfaceSpec
from src.utils.logger import logger

G = 9.8
BASELINE_COMMANDS = {"MinGF": 15.0, "MidGF": 60.0, "MaxGF": 100.0}


def _density(part: Part, library: MaterialLibrary, bound: str = "nominal") -> float:
    return getattr(library.lookup(part.material_id).density, bound)


def estimate_mass(parts: Sequence[Part], library: MaterialLibrary, bound: str = "nominal") -> float:
    """sum of rho(i) V(i)"""
    return float(sum(_density(p, library, bound) * p.volume for p in parts))


def mass_report(parts: Sequence[Part], library: MaterialLibrary) -> List[Dict[str, float]]:
    rows = []
    for part in parts:
        density = _density(part, library)
        rows.append(
            {
                "part_id": part.part_id,
                "material_id": part.material_id,
                "gaussians": int(len(part.indices)),
                "volume_m3": part.volume,
                "density_kg_m3": density,
                "mass_kg": density * part.volume,
            }
        )
    return rows


def f_min_from_mass(mass: float, mu: float, theta: float = 0.0) -> float:
    """1/2 m g (cos(theta)/mu - sin(theta)), clamped at zero"""
    if mu <= 0:
        raise PhysicsInputError(f"friction coefficient must be positive, got {mu}")
    if mass < 0:
        raise PhysicsInputError(f"mass must be non-negative, got {mass}")
    return max(0.5 * mass * G * (math.cos(theta) / mu - math.sin(theta)), 0.0)


def f_min(parts: Sequence[Part], library: MaterialLibrary, theta: float, mu: float, bound: str = "nominal") -> float:
    """Minimum no-slip squeeze; every part's weight is borne through the friction of part s"""
    return f_min_from_mass(estimate_mass(parts, library, bound), mu, theta)


def f_max_branches(
    area: float, youngs_modulus: float, thickness: float, kappa_max: float, yield_stress: float
) -> Tuple[float, float]:
    """(A sigma_y, 1/2 A E d kappa_max)"""
    values = {
        "area": area,
        "youngs_modulus": youngs_modulus,
        "thickness": thickness,
        "kappa_max": kappa_max,
        "yield_stress": yield_stress,
    }
    for name, value in values.items():
        if not value > 0:
            raise PhysicsInputError(f"{name} must be positive, got {value}")
    return area * yield_stress, 0.5 * area * youngs_modulus * thickness * kappa_max


def f_max(surface: SurfaceSpec, youngs_modulus: float, yield_stress: float) -> float:
    """Maximum no-damage force: the smaller of the yield and bending branches"""
    return min(f_max_branches(surface.area, youngs_modulus, surface.thickness, surface.kappa_max, yield_stress))


def _clip(value: float, lo: float, hi: float) -> float:
    return min(max(value, lo), hi)


def f_star(force_min: float, force_max: float, gripper: GripperProfile) -> GraspPlan:
    """Margin-clipped midpoint of the admissible force interval"""
    lo, hi = gripper.force_range
    f_bar = 0.5 * (force_min + force_max)
    if force_min < force_max:
        cmin, cmax = _clip(force_min, lo, hi), _clip(force_max, lo, hi)
        delta = max(0.0, cmax - cmin)
        lower, upper = cmin + gripper.eta * delta, cmax - gripper.eta * delta
        if lower > upper:
            # eta > 1/2 crosses the margins; fall back to the clipped interval midpoint
            lower = upper = 0.5 * (cmin + cmax)
        value = _clip(f_bar, lower, upper)
        return GraspPlan(
            f_min=force_min, f_max=force_max, f_bar=f_bar, f_star=value,
            feasible=True, delta_f=delta, bounds=(lower, upper),
        )
    return GraspPlan(
        f_min=force_min, f_max=force_max, f_bar=f_bar, f_star=_clip(f_bar, lo, hi),
        feasible=False, delta_f=0.0, bounds=None,
    )


def hardness_at(
    pixel: Tuple[int, int],
    cam: CameraModel,
    cloud: GaussianCloud,
    field: PropertyField,
    depth_map: DepthMap,
    library: MaterialLibrary,
) -> Tuple[str, float]:
    """Shore reading of the front-surface Gaussian at (u, v), on the 0-200 axis"""
    u, v = int(pixel[0]), int(pixel[1])
    if not (0 <= u < cam.width and 0 <= v < cam.height):
        raise PreconditionError(f"pixel ({u}, {v}) is outside the {cam.width}x{cam.height} image")
    if depth_map.front_index is None:
        raise PreconditionError(f"depth map for view {depth_map.view_id} carries no front indices")
    index = int(depth_map.front_index[v, u])
    if index < 0 or not np.isfinite(depth_map.depth[v, u]):
        raise PhysicsInputError(f"pixel ({u}, {v}) in view {cam.view_id} is empty")
    ordinal = int(field.material[index])
    if ordinal == 0:
        raise UnresolvedSceneError("front Gaussian has no material", [index])
    record = library.by_ordinal(ordinal)
    return record.shore_hardness.scale.value, unified_hardness(record)


def _nearest_part(decomposition: PartDecomposition, cloud: GaussianCloud, contact: np.ndarray) -> Part:
    best = None
    for part in decomposition.parts:
        d = float(np.min(np.linalg.norm(cloud.positions[part.indices] - contact, axis=1)))
        if best is None or d < best[0]:
            best = (d, part)
    return best[1]


def slab_thickness(part: Part, contact: np.ndarray, grasp_axis: Sequence[float]) -> float:
    """
    Occupied length of the voxel column through the contact point along the
    (dominant axis of the) grasp direction; the thinnest column if it misses
    """
    axis = int(np.argmax(np.abs(np.asarray(grasp_axis, dtype=np.float64))))
    others = [a for a in range(3) if a != axis]
    keys = part.voxels[:, others]
    columns, counts = np.unique(keys, axis=0, return_counts=True)
    target = np.floor((contact - part.origin) / part.voxel_size).astype(np.int64)[others]
    hit = np.flatnonzero(np.all(columns == target, axis=1))
    count = counts[hit[0]] if len(hit) else counts.min()
    return float(count) * part.voxel_size


def plan_grasp(
    cloud: GaussianCloud,
    field: PropertyField,
    gripper: GripperProfile,
    library: MaterialLibrary,
    voxel_size: float = VOXEL_SIZE,
    fill_interior: bool = True,
    contact_point: Optional[Sequence[float]] = None,
    theta: Optional[float] = None,
    area: Optional[float] = None,
    thickness: Optional[float] = None,
    kappa_max: Optional[float] = None,
) -> Tuple[GraspPlan, PartDecomposition]:
    """estimate_volumes -> force-bearing part -> F_min, F_max -> F* -> N_GF"""
    if not field.fully_resolved:
        raise UnresolvedSceneError("grasp planning needs a resolved field", field.unresolved_indices())
    decomposition = estimate_volumes(cloud, field, library, voxel_size, fill_interior)
    parts = decomposition.parts

    if contact_point is None:
        contact_point = gripper.contact_point
    contact = (
        np.asarray(contact_point, dtype=np.float64)
        if contact_point is not None
        else cloud.positions.mean(axis=0)
    )
    part_s = _nearest_part(decomposition, cloud, contact)
    record = library.lookup(part_s.material_id)

    d = thickness if thickness is not None else slab_thickness(part_s, contact, gripper.grasp_axis)
    surface = SurfaceSpec(
        area=area if area is not None else gripper.tip_area,
        thickness=d,
        kappa_max=kappa_max if kappa_max is not None else gripper.kappa_max,
    )
    theta = gripper.theta if theta is None else theta

    mu = record.friction_mu
    force_min = f_min(parts, library, theta, mu)
    yield_branch, bending_branch = f_max_branches(
        surface.area, record.youngs_modulus.nominal, surface.thickness, surface.kappa_max, record.yield_stress
    )
    force_max = min(yield_branch, bending_branch)
    plan = f_star(force_min, force_max, gripper)

    lo, hi = gripper.force_range
    details: Dict[str, object] = {
        "parts": mass_report(parts, library),
        "mass_kg": estimate_mass(parts, library),
        "force_bearing_part": part_s.part_id,
        "force_bearing_material": part_s.material_id,
        "contact_point": [float(c) for c in contact],
        "theta": theta,
        "mu_s": mu,
        "surface": surface.model_dump(),
        "f_max_yield": yield_branch,
        "f_max_bending": bending_branch,
        "f_max_branch": "yield" if yield_branch <= bending_branch else "bending",
        "f_min_clipped": force_min < lo or force_min > hi,
        "f_max_clipped": force_max < lo or force_max > hi,
        "f_min_band": [f_min(parts, library, theta, mu, "min"), f_min(parts, library, theta, mu, "max")],
        "f_max_band": [
            min(yield_branch, 0.5 * surface.area * record.youngs_modulus.min * surface.thickness * surface.kappa_max),
            min(yield_branch, 0.5 * surface.area * record.youngs_modulus.max * surface.thickness * surface.kappa_max),
        ],
    }

    command = None
    if gripper.calibration:
        curve = CalibrationCurve.from_profile(gripper)
        command = to_normalized_command(plan.f_star, gripper)
        details["baselines"] = baseline_trials(curve, force_min, force_max)

    plan = plan.model_copy(update={"normalized_command": command, "details": details})
    decomposition = PartDecomposition(parts=parts, force_bearing_part=part_s.part_id, surface=surface)
    logger.info(
        "Planned grasp",
        extra={
            "f_min": plan.f_min, "f_max": plan.f_max, "f_star": plan.f_star,
            "feasible": plan.feasible, "n_gf": command,
        },
    )
    return plan, decomposition


def baseline_trials(curve: CalibrationCurve, force_min: float, force_max: float) -> Dict[str, Dict[str, object]]:
    """Fixed-command strategies judged against the admissible interval"""
    trials = {}
    for name, command in BASELINE_COMMANDS.items():
        force = curve.force(command)
        trials[name] = {
            "n_gf": command,
            "force": force,
            "picked_up": force >= force_min,
            "no_damage": force <= force_max,
        }
    return trials
