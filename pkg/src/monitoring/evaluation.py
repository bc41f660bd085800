"""
Segmentation, property and grasping metrics
"""
import math
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.errors import DataError, MetricInputError
from src.core.material_library import MaterialLibrary
from src.core.physics import hardness_at
from src.core.rasterizer import rasterize
from src.models.scene import CameraModel, DepthMap, GaussianCloud, LabelRender, PropertyField
from src.models.schemas import MetricReport
from src.utils.logger import logger

LABEL_THRESHOLD = 0.5
SCALAR_METRICS = ("ade", "alde", "ape", "mnre")


def family_table(library: MaterialLibrary) -> np.ndarray:
    """Material ordinal -> family ordinal lookup (index 0 stays background)"""
    table = np.zeros(len(library) + 1, dtype=np.int64)
    for material_id in library.candidates():
        table[library.ordinal(material_id)] = library.family_ordinal(library.family_of(material_id))
    return table


def render_labels(
    cloud: GaussianCloud, field: PropertyField, cam: CameraModel, library: MaterialLibrary
) -> LabelRender:
    """Composite one-hot family vectors front to back; argmax where opacity reaches 0.5"""
    families = family_table(library)[field.material]
    raster = rasterize(cloud, cam, labels=families, num_labels=len(library.family_labels))
    labels = np.argmax(raster.label_weights, axis=2).astype(np.uint16)
    labels[raster.accum < LABEL_THRESHOLD] = 0
    return LabelRender(view_id=cam.view_id, labels=labels)


def align_ground_truth(
    labels: np.ndarray, legend: Mapping[int, str], library: MaterialLibrary, view_id: str = ""
) -> LabelRender:
    """Re-index an annotated label map from its own legend onto the family ordinals"""
    aligned = np.zeros(labels.shape, dtype=np.uint16)
    for value in np.unique(labels):
        if value == 0:
            continue
        name = legend.get(int(value))
        if name is None:
            raise MetricInputError(f"ground-truth label {value} missing from the legend")
        try:
            aligned[labels == value] = library.family_ordinal(name.lower())
        except DataError:
            raise MetricInputError(f"ground-truth label {name!r} is not an evaluation family")
    return LabelRender(view_id=view_id, labels=aligned)


def family_legend(library: MaterialLibrary) -> Dict[int, str]:
    return {i: name for i, name in enumerate(library.family_labels, 1)}


def miou(
    pred: LabelRender,
    gt: LabelRender,
    class_names: Optional[Mapping[int, str]] = None,
) -> MetricReport:
    """Mean IoU over the classes present in the ground truth; background excluded"""
    if pred.labels.shape != gt.labels.shape:
        raise MetricInputError(f"prediction {pred.labels.shape} and ground truth {gt.labels.shape} differ in size")
    classes = [int(c) for c in np.unique(gt.labels) if c != 0]
    per_class: Dict[str, float] = {}
    for c in classes:
        p, g = pred.labels == c, gt.labels == c
        union = int(np.count_nonzero(p | g))
        name = class_names.get(c, str(c)) if class_names else str(c)
        per_class[name] = np.count_nonzero(p & g) / union
    metrics = {"miou": float(np.mean(list(per_class.values())))} if per_class else {}
    counts = {"classes": len(classes), "pixels": int(gt.labels.size)}
    return MetricReport(metrics=metrics, per_class_iou=per_class, counts=counts)


def scalar_metrics(p: float, p_hat: float) -> Tuple[float, float, float, float]:
    """(ADE, ALDE, APE, MnRE) for one ground-truth / estimate pair"""
    if not (p > 0 and p_hat > 0):
        raise MetricInputError(f"log and ratio metrics need positive values, got p={p}, p_hat={p_hat}")
    ade = abs(p - p_hat)
    alde = abs(math.log(p) - math.log(p_hat))
    ape = abs((p - p_hat) / p)
    mnre = min(p / p_hat, p_hat / p)
    return ade, alde, ape, mnre


def pra(p: Sequence[float], p_hat: Sequence[float]) -> float:
    """Fraction of unordered pairs whose ordering agrees; a tie agrees only with a tie"""
    if len(p) != len(p_hat):
        raise MetricInputError(f"PRA needs equal lengths, got {len(p)} and {len(p_hat)}")
    if len(p) < 2:
        raise MetricInputError("PRA needs at least two values")
    a = np.sign(np.subtract.outer(np.asarray(p, dtype=np.float64), np.asarray(p, dtype=np.float64)))
    b = np.sign(np.subtract.outer(np.asarray(p_hat, dtype=np.float64), np.asarray(p_hat, dtype=np.float64)))
    upper = np.triu_indices(len(p), k=1)
    return float(np.mean(a[upper] == b[upper]))


def grasp_rates(trials: Sequence[Tuple[bool, bool]]) -> Tuple[float, float, float]:
    """(PUR, NDR, SR)"""
    if not trials:
        raise MetricInputError("grasp rates need at least one trial")
    picked = np.array([bool(t[0]) for t in trials])
    intact = np.array([bool(t[1]) for t in trials])
    return float(picked.mean()), float(intact.mean()), float((picked & intact).mean())


def mean_scalar_metrics(pairs: Iterable[Tuple[float, float]]) -> Dict[str, float]:
    values = np.array([scalar_metrics(p, q) for p, q in pairs])
    if len(values) == 0:
        raise MetricInputError("no values to evaluate")
    return dict(zip(SCALAR_METRICS, values.mean(axis=0).tolist()))


def evaluate_mass(gt_kg: float, est_kg: float) -> MetricReport:
    metrics = dict(zip(SCALAR_METRICS, scalar_metrics(gt_kg, est_kg)))
    metrics.update({"mass_gt_kg": gt_kg, "mass_est_kg": est_kg})
    return MetricReport(metrics=metrics)


def read_hardness_points(path: Union[str, Path]) -> List[Tuple[str, int, int, str, float]]:
    """Lines `view_id u v scale value`; value is on the scale's own 0-100 range"""
    points = []
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5 or parts[3].upper() not in ("A", "D"):
            raise DataError(f"{path}:{number}: expected `view_id u v scale value`")
        try:
            points.append((parts[0], int(parts[1]), int(parts[2]), parts[3].upper(), float(parts[4])))
        except ValueError:
            raise DataError(f"{path}:{number}: expected `view_id u v scale value`")
    return points


def unified_value(scale: str, value: float) -> float:
    return value + 100.0 if scale.upper() == "D" else value


def evaluate_hardness(
    points: Sequence[Tuple[str, int, int, str, float]],
    cameras: Mapping[str, CameraModel],
    cloud: GaussianCloud,
    field: PropertyField,
    depth_maps: Mapping[str, DepthMap],
    library: MaterialLibrary,
) -> Tuple[MetricReport, List[Dict[str, object]]]:
    """Per-point Shore estimates against annotated readings, compared on the unified axis"""
    rows = []
    for view_id, u, v, scale, value in points:
        if view_id not in cameras:
            raise MetricInputError(f"hardness point refers to unknown view {view_id}")
        est_scale, estimate = hardness_at((u, v), cameras[view_id], cloud, field, depth_maps[view_id], library)
        rows.append(
            {
                "view_id": view_id, "u": u, "v": v,
                "gt_scale": scale, "gt": unified_value(scale, value),
                "est_scale": est_scale, "estimate": estimate,
            }
        )
    pairs = [(r["gt"], r["estimate"]) for r in rows]
    metrics = mean_scalar_metrics(pairs)
    if len(rows) >= 2:
        metrics["pra"] = pra([p for p, _ in pairs], [q for _, q in pairs])
    logger.info("Evaluated hardness", extra={"points": len(rows), **metrics})
    return MetricReport(metrics=metrics, counts={"points": len(rows)}), rows


def read_trials(path: Union[str, Path]) -> List[Tuple[bool, bool]]:
    """CSV `picked_up,no_damage`, header optional, values true/false or 1/0"""
    truthy, falsy = {"true", "1", "yes"}, {"false", "0", "no"}
    trials = []
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        fields = [f.strip().lower() for f in line.split(",")]
        if fields == [""] or fields == ["picked_up", "no_damage"]:
            continue
        if len(fields) != 2 or any(f not in truthy | falsy for f in fields):
            raise DataError(f"{path}:{number}: expected `picked_up,no_damage`")
        trials.append((fields[0] in truthy, fields[1] in truthy))
    return trials


def evaluate_trials(trials: Sequence[Tuple[bool, bool]]) -> MetricReport:
    pur, ndr, sr = grasp_rates(trials)
    return MetricReport(metrics={"pur": pur, "ndr": ndr, "sr": sr}, counts={"trials": len(trials)})
