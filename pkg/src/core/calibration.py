"""
Gripper profile loading and the normalized-command calibration curve
"""
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from numpy.polynomial import Polynomial
from pydantic import ValidationError
from scipy.optimize import bisect

from src.core.errors import CalibrationError, ConfigError
from src.models.schemas import CalibrationSample, GripperProfile
from src.utils.logger import logger

DEFAULT_GRIPPER_PATH = Path(__file__).resolve().parent.parent / "data" / "gripper_default.yaml"
MONOTONE_SAMPLES = 1001


def _parse_rows(rows: Any) -> List[Dict[str, float]]:
    """Calibration given as `N_GF force_N` text rows or as [N_GF, force] pairs"""
    if rows is None:
        return []
    if isinstance(rows, str):
        rows = [line.split() for line in rows.splitlines() if line.strip() and not line.strip().startswith("#")]
    samples = []
    for row in rows:
        if isinstance(row, dict):
            samples.append(row)
            continue
        if len(row) != 2:
            raise ConfigError(f"calibration row {row!r} must be `N_GF force_N`")
        samples.append({"command": float(row[0]), "force": float(row[1])})
    return samples


def load_gripper_profile(path: Optional[Path] = None) -> GripperProfile:
    path = Path(path) if path is not None else DEFAULT_GRIPPER_PATH
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except OSError as e:
        raise ConfigError(f"cannot read gripper profile {path}: {e}")
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid gripper profile {path}: {e}")
    if not isinstance(doc, dict):
        raise ConfigError(f"gripper profile {path} must be a mapping")
    doc["calibration"] = _parse_rows(doc.get("calibration"))
    try:
        return GripperProfile(**doc)
    except ValidationError as e:
        raise ConfigError(f"invalid gripper profile {path}: {e}")


class CalibrationCurve:
    """Least-squares polynomial N_GF -> Newtons, monotone over the enabled range"""

    def __init__(self, samples: Sequence[CalibrationSample], degree: int, enabled_range: Tuple[float, float]):
        if len(samples) < degree + 1:
            raise CalibrationError(f"degree {degree} fit needs at least {degree + 1} samples, got {len(samples)}")
        self.enabled_range = (float(enabled_range[0]), float(enabled_range[1]))
        x = np.array([s.command for s in samples], dtype=np.float64)
        y = np.array([s.force for s in samples], dtype=np.float64)
        self.poly = Polynomial.fit(x, y, degree)

        grid = np.linspace(*self.enabled_range, MONOTONE_SAMPLES)
        slope = self.poly.deriv()(grid)
        tol = 1e-9 * max(float(np.abs(y).max()), 1.0)
        if np.any(slope < -tol):
            bad = float(grid[np.argmax(slope < -tol)])
            raise CalibrationError(
                f"degree {degree} calibration fit is not monotone (decreasing near N_GF={bad:.2f}); "
                "try a lower poly_degree"
            )

    @classmethod
    def from_profile(cls, gripper: GripperProfile) -> "CalibrationCurve":
        return cls(gripper.calibration, gripper.poly_degree, gripper.enabled_range)

    def force(self, command: float) -> float:
        return float(self.poly(command))

    @property
    def force_range(self) -> Tuple[float, float]:
        lo, hi = self.enabled_range
        return self.force(lo), self.force(hi)

    def invert(self, force: float) -> float:
        """Bisection over the enabled range, clamped at both ends"""
        lo, hi = self.enabled_range
        f_lo, f_hi = self.force_range
        if force <= f_lo:
            return lo
        if force >= f_hi:
            return hi
        return float(bisect(lambda n: self.force(n) - force, lo, hi, xtol=1e-9))


def to_normalized_command(f_star: float, gripper: GripperProfile) -> float:
    command = CalibrationCurve.from_profile(gripper).invert(f_star)
    logger.debug("Normalized gripper command", extra={"f_star": f_star, "n_gf": command})
    return command
