"""
Array-backed scene types (Gaussians, cameras, masks, per-Gaussian fields)
"""
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.core.errors import MaskError, PreconditionError

UNIT_NORM_TOL = 1e-6
ORTHONORMAL_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class RawGaussianAttributes:
    """Pre-activation values exactly as stored in the source PLY"""

    opacity: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    dtypes: Dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class GaussianCloud:
    positions: np.ndarray
    opacities: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray  # (w, x, y, z), the rot_0..rot_3 order
    sh_coeffs: np.ndarray  # (N, 3, (degree + 1) ** 2)
    extras: Dict[str, np.ndarray] = field(default_factory=dict)
    raw: Optional[RawGaussianAttributes] = None

    def __post_init__(self):
        n = len(self.positions)
        shapes = {
            "positions": (self.positions, (n, 3)),
            "scales": (self.scales, (n, 3)),
            "rotations": (self.rotations, (n, 4)),
        }
        for name, (arr, shape) in shapes.items():
            if arr.shape != shape:
                raise PreconditionError(f"{name} has shape {arr.shape}, expected {shape}")
        if self.opacities.shape != (n,):
            raise PreconditionError(f"opacities has shape {self.opacities.shape}, expected ({n},)")
        if self.sh_coeffs.ndim != 3 or self.sh_coeffs.shape[:2] != (n, 3):
            raise PreconditionError(f"sh_coeffs has shape {self.sh_coeffs.shape}, expected ({n}, 3, K)")
        k = self.sh_coeffs.shape[2]
        if int(round(np.sqrt(k))) ** 2 != k:
            raise PreconditionError(f"sh_coeffs block of {k} is not a full SH degree")
        for name, arr in self.extras.items():
            if len(arr) != n:
                raise PreconditionError(f"extra field {name} has length {len(arr)}, expected {n}")
        if n:
            if np.any(self.opacities < 0.0) or np.any(self.opacities > 1.0):
                raise PreconditionError("opacities must lie in [0, 1]")
            if np.any(self.scales <= 0.0):
                raise PreconditionError("scales must be strictly positive")
            norms = np.linalg.norm(self.rotations, axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
                raise PreconditionError("rotations must be unit quaternions")

    @property
    def count(self) -> int:
        return len(self.positions)

    @property
    def sh_degree(self) -> int:
        return int(round(np.sqrt(self.sh_coeffs.shape[2]))) - 1

    def extent(self) -> float:
        """Diagonal of the axis-aligned bounding box of the centers"""
        if self.count == 0:
            return 0.0
        return float(np.linalg.norm(self.positions.max(axis=0) - self.positions.min(axis=0)))

    @classmethod
    def from_arrays(cls, positions, opacities, scales, rotations=None, sh_coeffs=None) -> "GaussianCloud":
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = len(positions)
        if rotations is None:
            rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        if sh_coeffs is None:
            sh_coeffs = np.zeros((n, 3, 1))
        return cls(
            positions=positions,
            opacities=np.asarray(opacities, dtype=np.float64).reshape(n),
            scales=np.asarray(scales, dtype=np.float64).reshape(n, 3),
            rotations=np.asarray(rotations, dtype=np.float64).reshape(n, 4),
            sh_coeffs=np.asarray(sh_coeffs, dtype=np.float64).reshape(n, 3, -1),
        )


@dataclass(frozen=True, eq=False)
class CameraModel:
    intrinsics: np.ndarray
    rotation: np.ndarray  # world -> camera
    translation: np.ndarray
    width: int
    height: int
    view_id: str

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise PreconditionError(f"camera {self.view_id}: image size must be positive")
        k = self.intrinsics
        if k.shape != (3, 3) or k[1, 0] != 0 or k[2, 0] != 0 or k[2, 1] != 0 or k[2, 2] != 1:
            raise PreconditionError(f"camera {self.view_id}: K must be upper-triangular with K[2][2] = 1")
        r = self.rotation
        if r.shape != (3, 3) or np.max(np.abs(r.T @ r - np.eye(3))) > ORTHONORMAL_TOL:
            raise PreconditionError(f"camera {self.view_id}: rotation is not orthonormal")
        if self.translation.shape != (3,):
            raise PreconditionError(f"camera {self.view_id}: translation must be a 3-vector")

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates"""
        return -self.rotation.T @ self.translation

    @classmethod
    def pinhole(cls, fx, fy, cx, cy, width, height, rotation=None, translation=None, view_id="0") -> "CameraModel":
        k = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        return cls(
            intrinsics=k,
            rotation=np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64),
            translation=np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64),
            width=int(width),
            height=int(height),
            view_id=str(view_id),
        )


@dataclass(frozen=True, eq=False)
class Mask:
    segment_id: int
    bitmap: np.ndarray  # (height, width) bool
    predicted_iou: float = 1.0
    stability: float = 1.0

    @property
    def area(self) -> int:
        return int(self.bitmap.sum())


@dataclass(frozen=True, eq=False)
class MaskSet:
    view_id: str
    masks: Tuple[Mask, ...] = ()

    def __post_init__(self):
        ids = [m.segment_id for m in self.masks]
        if len(set(ids)) != len(ids):
            raise MaskError(f"view {self.view_id}: duplicate segment ids")
        if any(i < 1 for i in ids):
            raise MaskError(f"view {self.view_id}: segment ids must be >= 1")
        shapes = {m.bitmap.shape for m in self.masks}
        if len(shapes) > 1:
            raise MaskError(f"view {self.view_id}: masks have differing dimensions {sorted(shapes)}")

    def __len__(self) -> int:
        return len(self.masks)

    def by_id(self, segment_id: int) -> Mask:
        for mask in self.masks:
            if mask.segment_id == segment_id:
                return mask
        raise KeyError(segment_id)


@dataclass(frozen=True, eq=False)
class DepthMap:
    view_id: str
    depth: np.ndarray
    opacity_accum: np.ndarray
    front_index: Optional[np.ndarray] = None  # -1 where the threshold is never crossed


@dataclass(frozen=True)
class PropertyVote:
    gaussian_index: int
    observations: Tuple[Tuple[str, int], ...]
    winner: Optional[int]


class Provenance(IntEnum):
    VOTED = 0
    PROPAGATED = 1
    UNRESOLVED = 2


SCALAR_FIELDS = ("density", "youngs_modulus", "poisson_ratio", "friction", "yield_stress")


@dataclass(frozen=True, eq=False)
class PropertyField:
    material: np.ndarray  # ordinal, 0 = none
    provenance: np.ndarray
    source: np.ndarray  # propagation source index, -1 otherwise
    density: np.ndarray
    youngs_modulus: np.ndarray
    poisson_ratio: np.ndarray
    friction: np.ndarray
    yield_stress: np.ndarray

    def __len__(self) -> int:
        return len(self.material)

    def unresolved_indices(self) -> np.ndarray:
        return np.flatnonzero(self.provenance == Provenance.UNRESOLVED)

    @property
    def fully_resolved(self) -> bool:
        return not np.any(self.provenance == Provenance.UNRESOLVED)

    def provenance_counts(self) -> Dict[str, int]:
        return {p.name.lower(): int(np.sum(self.provenance == p)) for p in Provenance}


@dataclass(frozen=True, eq=False)
class LabelRender:
    view_id: str
    labels: np.ndarray  # (height, width) family ordinal, 0 = background


@dataclass(frozen=True, eq=False)
class Part:
    part_id: int
    material_id: str
    volume: float
    indices: np.ndarray
    voxels: np.ndarray  # (K, 3) integer voxel coordinates after closing/fill
    origin: np.ndarray
    voxel_size: float


@dataclass(frozen=True, eq=False)
class PartDecomposition:
    parts: List[Part]
    force_bearing_part: Optional[int] = None
    surface: Optional[Any] = None

    def part(self, part_id: int) -> Part:
        for p in self.parts:
            if p.part_id == part_id:
                return p
        raise KeyError(part_id)


@dataclass(frozen=True, eq=False)
class AnnotatedScene:
    cloud: GaussianCloud
    field: PropertyField
    library: Dict[str, Any]
    provenance: Dict[str, Any]
