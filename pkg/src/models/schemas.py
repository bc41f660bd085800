"""
Pydantic schemas for records, profiles and reports
"""
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

EVALUATION_FAMILIES = (
    "wood",
    "metal",
    "plastic",
    "glass",
    "fabric",
    "foam",
    "marble",
    "ceramic",
    "concrete",
    "leather",
)


class ShoreScale(str, Enum):
    A = "A"
    D = "D"


class PropertyRange(BaseModel):
    """A (min, max, nominal) triple"""

    model_config = ConfigDict(frozen=True)

    min: float
    max: float
    nominal: float

    @model_validator(mode="after")
    def ordered(self):
        if self.min > self.max:
            raise ValueError(f"range violation: min {self.min} > max {self.max}")
        if not self.min <= self.nominal <= self.max:
            raise ValueError(f"range violation: nominal {self.nominal} outside [{self.min}, {self.max}]")
        return self


class ShoreHardness(BaseModel):
    model_config = ConfigDict(frozen=True)

    scale: ShoreScale
    min: float = Field(..., ge=0, le=100)
    max: float = Field(..., ge=0, le=100)

    @model_validator(mode="after")
    def ordered(self):
        if self.min > self.max:
            raise ValueError(f"range violation: shore min {self.min} > max {self.max}")
        return self

    @property
    def midpoint(self) -> float:
        return (self.min + self.max) / 2.0

    def unified(self, value: float) -> float:
        """Shore D sits at 100-200 on the unified axis"""
        return value + 100.0 if self.scale == ShoreScale.D else value


class MaterialRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    material_id: str
    family: str
    density: PropertyRange
    youngs_modulus: PropertyRange
    poisson_ratio: float = Field(..., gt=-1.0, lt=0.5)
    friction_mu: float = Field(..., gt=0.0)
    yield_stress: float = Field(..., gt=0.0)
    shore_hardness: ShoreHardness
    default: bool = False
    aliases: Tuple[str, ...] = ()
    provenance: str = ""

    @field_validator("material_id", "family")
    @classmethod
    def lowercase_key(cls, v: str) -> str:
        if not v or v != v.strip().lower():
            raise ValueError(f"{v!r} must be a non-empty lowercase key")
        return v

    @field_validator("density", "youngs_modulus")
    @classmethod
    def strictly_positive(cls, v: PropertyRange) -> PropertyRange:
        if v.min <= 0:
            raise ValueError("range violation: value must be > 0")
        return v


class SegmentAnnotation(BaseModel):
    view_id: str
    segment_id: int = Field(..., ge=1)
    material_id: Optional[str] = None
    raw_material_text: str = ""
    properties_quoted: Optional[Tuple[float, float, float]] = None
    confidence: float = Field(1.0, ge=0.0, le=1.0)
    unresolved: bool = False

    @model_validator(mode="after")
    def resolved_has_material(self):
        if not self.unresolved and self.material_id is None:
            raise ValueError("resolved annotation needs a material_id")
        return self


class PromptKind(str, Enum):
    PART = "part"
    DESCRIPTION = "description"
    LOCAL_PART = "local_part"


class PromptBundle(BaseModel):
    kind: PromptKind
    system_text: str
    user_text: str
    images: List[str]  # base64 PNG

    @model_validator(mode="after")
    def image_count(self):
        expected = {PromptKind.PART: 3, PromptKind.DESCRIPTION: 1, PromptKind.LOCAL_PART: 1}[self.kind]
        if len(self.images) != expected:
            raise ValueError(f"{self.kind.value} prompts carry exactly {expected} image(s), got {len(self.images)}")
        return self


class CalibrationSample(BaseModel):
    model_config = ConfigDict(frozen=True)

    command: float
    force: float


class GripperProfile(BaseModel):
    force_range: Tuple[float, float]
    eta: float = Field(0.1, ge=0.0, le=1.0)
    theta: float = 0.0
    calibration: List[CalibrationSample] = []
    poly_degree: int = Field(5, ge=1)
    enabled_range: Tuple[float, float] = (15.0, 100.0)
    tip_area: float = Field(0.00011, gt=0.0)
    kappa_max: float = Field(0.5, gt=0.0)
    grasp_axis: Tuple[float, float, float] = (1.0, 0.0, 0.0)
    contact_point: Optional[Tuple[float, float, float]] = None

    @model_validator(mode="after")
    def consistent(self):
        lo, hi = self.force_range
        if not 0 < lo < hi:
            raise ValueError(f"force_range must satisfy 0 < F_lo < F_hi, got {self.force_range}")
        elo, ehi = self.enabled_range
        if not elo < ehi:
            raise ValueError(f"enabled_range must be increasing, got {self.enabled_range}")
        for sample in self.calibration:
            if not elo <= sample.command <= ehi:
                raise ValueError(f"calibration input {sample.command} outside enabled range {self.enabled_range}")
        return self


class SurfaceSpec(BaseModel):
    area: float = Field(..., gt=0.0)
    thickness: float = Field(..., gt=0.0)
    kappa_max: float = Field(..., gt=0.0)


class GraspPlan(BaseModel):
    f_min: float
    f_max: float
    f_bar: float
    f_star: float
    feasible: bool
    normalized_command: Optional[float] = None
    delta_f: float = 0.0
    bounds: Optional[Tuple[float, float]] = None
    details: Dict[str, object] = {}


class MetricReport(BaseModel):
    metrics: Dict[str, float] = {}
    per_class_iou: Dict[str, float] = {}
    counts: Dict[str, int] = {}

    def to_csv(self) -> str:
        lines = ["kind,name,value"]
        for name in sorted(self.per_class_iou):
            lines.append(f"class_iou,{name},{float(self.per_class_iou[name])!r}")
        for name in sorted(self.metrics):
            lines.append(f"metric,{name},{float(self.metrics[name])!r}")
        for name in sorted(self.counts):
            lines.append(f"count,{name},{self.counts[name]}")
        return "\n".join(lines) + "\n"
