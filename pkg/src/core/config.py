import hashlib
import json
import os
import re
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.core.errors import ConfigError

load_dotenv()


class Settings(BaseSettings):
    """Environment-driven secrets and endpoints"""

    model_config = SettingsConfigDict(env_prefix="GSPROP_", env_file=".env", case_sensitive=False, extra="ignore")

    # API tokens
    lmm_token: str = ""
    seg_token: str = ""

    # Endpoints
    lmm_base_url: str = "https://api.openai.com/v1"
    lmm_model: str = "gpt-4o"
    seg_base_url: str = "http://localhost:8080"

    # Application
    log_level: str = "INFO"


settings = Settings()


# Fields that change how a run executes but not what it produces
OPERATIONAL_FIELDS = {"output_dir", "workers", "dump_intermediates", "metrics_file", "cache_dir", "log_level"}


class PipelineConfig(BaseModel):
    # Paths
    scene: Optional[Path] = None
    cameras: Optional[Path] = None
    camera_format: Optional[Literal["transforms_json", "colmap_text"]] = None
    camera_convention: Literal["opencv", "opengl"] = "opencv"
    images_dir: Optional[Path] = None
    masks_dir: Optional[Path] = None
    fixtures_dir: Optional[Path] = None
    library: Optional[Path] = None
    gripper: Optional[Path] = None
    output_dir: Path = Path("gsprop_out")

    # Mask culling
    iou_min: float = Field(0.88, ge=0.0, le=1.0)
    stability_min: float = Field(0.95, ge=0.0, le=1.0)
    overlap_max: float = Field(0.7, ge=0.0, le=1.0)
    min_segment_fraction: float = Field(0.001, ge=0.0, le=1.0)
    points_per_side: int = Field(32, ge=1)

    # Lifting
    tol_rel: float = Field(0.01, ge=0.0)
    front_threshold: float = Field(0.5, gt=0.0, lt=1.0)
    voting: Literal["frequency", "single_view"] = "frequency"
    knn: int = Field(8, ge=1)

    # Physics
    voxel_size: float = Field(0.005, gt=0.0)
    fill_interior: bool = True
    contact_point: Optional[Tuple[float, float, float]] = None
    theta: Optional[float] = None
    area: Optional[float] = Field(None, gt=0.0)
    thickness: Optional[float] = Field(None, gt=0.0)
    kappa_max: Optional[float] = Field(None, gt=0.0)

    # Providers
    mode: Literal["live", "fixture"] = "fixture"
    view_count: int = Field(10, ge=1)
    global_local: bool = True
    retry_max: int = Field(2, ge=0)
    max_in_flight: int = Field(4, ge=1)
    requests_per_second: float = Field(2.0, gt=0.0)
    lmm_model: Optional[str] = None
    lmm_base_url: Optional[str] = None
    seg_base_url: Optional[str] = None
    request_timeout: float = Field(60.0, gt=0.0)

    # Execution
    workers: int = Field(1, ge=1)
    dump_intermediates: bool = False
    metrics_file: Optional[Path] = None
    cache_dir: Optional[Path] = None
    log_level: str = "INFO"

    @field_validator("output_dir")
    @classmethod
    def output_dir_writable(cls, v: Path) -> Path:
        probe = v
        while not probe.exists():
            if probe.parent == probe:
                break
            probe = probe.parent
        if probe.exists() and not os.access(probe, os.W_OK):
            raise ValueError(f"output directory {v} is not writable")
        return v

    def resolved_model(self) -> str:
        return self.lmm_model or settings.lmm_model

    def resolved_lmm_url(self) -> str:
        return self.lmm_base_url or settings.lmm_base_url

    def resolved_seg_url(self) -> str:
        return self.seg_base_url or settings.seg_base_url

    def input_paths(self) -> List[Path]:
        names = ("scene", "cameras", "images_dir", "masks_dir", "fixtures_dir", "library", "gripper")
        return [getattr(self, name) for name in names if getattr(self, name) is not None]

    def config_hash(self) -> str:
        """SHA-256 over the semantic config and every input byte it names"""
        payload = self.model_dump(mode="json", exclude=OPERATIONAL_FIELDS)
        digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8"))
        for path in self.input_paths():
            for file in _walk_files(path):
                digest.update(str(file.relative_to(path) if path.is_dir() else file.name).encode("utf-8"))
                digest.update(file.read_bytes())
        return digest.hexdigest()


def _walk_files(path: Path) -> List[Path]:
    if path.is_file():
        return [path]
    if path.is_dir():
        return sorted(p for p in path.rglob("*") if p.is_file())
    return []


_ENV_PATTERN = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")


def interpolate_env(text: str, environ: Optional[Mapping[str, str]] = None) -> str:
    """Expand ${VAR} and ${VAR:-default}; unset variables without default are an error"""
    environ = os.environ if environ is None else environ

    def replace(match: "re.Match[str]") -> str:
        name, default = match.group(1), match.group(2)
        if name in environ:
            return environ[name]
        if default is not None:
            return default
        raise ConfigError(f"Environment variable {name} referenced in config is not set")

    return _ENV_PATTERN.sub(replace, text)


def load_pipeline_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """Read the YAML config (if any) and apply non-None flag overrides"""
    data: Dict[str, Any] = {}
    base = Path(".")
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"Cannot read config {path}: {e}")
        try:
            data = yaml.safe_load(interpolate_env(text)) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {path}: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"Config {path} must be a mapping")
        base = Path(path).parent
        # Relative paths in the file are relative to the file
        for key in ("scene", "cameras", "images_dir", "masks_dir", "fixtures_dir", "library", "gripper", "output_dir"):
            if data.get(key) is not None and not Path(data[key]).is_absolute():
                data[key] = str(base / data[key])

    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value

    try:
        return PipelineConfig(**data)
    except ValidationError as e:
        raise ConfigError(f"Invalid pipeline config: {e}")
