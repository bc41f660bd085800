"""
Annotated scene export: PLY with per-vertex physical properties plus a YAML manifest
"""
import dataclasses
import os
from datetime import datetime, timezone
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import yaml

from src.connectors.gaussian_ply import parse_gaussian_ply, write_gaussian_ply
from src.core.errors import DataError, SceneFormatError, UnresolvedSceneError
from src.core.material_library import library_from_snapshot
from src.models.scene import SCALAR_FIELDS, AnnotatedScene, Part, PropertyField
from src.utils.logger import logger

MANIFEST_FORMAT = "gsprop-annotated-ply"
MANIFEST_VERSION = 1
HISTOGRAM_BINS = 10

# name -> PLY type, in file order
EXPORT_FIELDS = {
    "material_id": "i4",
    "density": "f8",
    "youngs_modulus": "f8",
    "poisson_ratio": "f8",
    "friction": "f8",
    "yield_stress": "f8",
    "provenance": "u1",
    "source": "i4",
}


class AnnotatedExport(NamedTuple):
    ply: bytes
    manifest: str


def manifest_timestamp(fixture_mode: bool = False) -> str:
    """SOURCE_DATE_EPOCH if set; the epoch in fixture mode; otherwise now"""
    epoch = os.getenv("SOURCE_DATE_EPOCH")
    if epoch is not None:
        moment = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    elif fixture_mode:
        moment = datetime.fromtimestamp(0, tz=timezone.utc)
    else:
        moment = datetime.now(timezone.utc)
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


def _validate(scene: AnnotatedScene) -> None:
    field, count = scene.field, scene.cloud.count
    if len(field) != count:
        raise DataError(f"property field has {len(field)} entries for {count} Gaussians")
    unresolved = field.unresolved_indices()
    if len(unresolved):
        raise UnresolvedSceneError("cannot export unresolved Gaussians; run propagation first", unresolved)
    materials = len(scene.library.get("materials", []))
    used = np.unique(field.material)
    if len(used) and (used.min() < 1 or used.max() > materials):
        raise DataError(f"material ordinals {used.tolist()} do not resolve in the library snapshot")


def export_annotated_ply(scene: AnnotatedScene, text: bool = False) -> AnnotatedExport:
    """PLY bytes with material_id and resolved scalars per vertex, plus the manifest text"""
    _validate(scene)
    field = scene.field
    extra = {
        "material_id": field.material.astype(np.int32),
        "provenance": field.provenance.astype(np.uint8),
        "source": field.source.astype(np.int32),
    }
    for name in SCALAR_FIELDS:
        extra[name] = getattr(field, name).astype(np.float64)
    extra = {name: extra[name] for name in EXPORT_FIELDS}

    ply = write_gaussian_ply(scene.cloud, extra_fields=extra, text=text)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "count": scene.cloud.count,
        "fields": dict(EXPORT_FIELDS),
        "provenance": scene.provenance,
        "library": scene.library,
    }
    logger.info("Exported annotated scene", extra={"count": scene.cloud.count, "bytes": len(ply)})
    return AnnotatedExport(ply=ply, manifest=yaml.safe_dump(manifest, sort_keys=True))


def import_annotated_ply(ply: bytes, manifest_text: str) -> AnnotatedScene:
    try:
        manifest = yaml.safe_load(manifest_text)
    except yaml.YAMLError as e:
        raise DataError(f"invalid manifest: {e}")
    if not isinstance(manifest, dict) or manifest.get("format") != MANIFEST_FORMAT:
        raise DataError("manifest is not a gsprop annotated-PLY manifest")
    if manifest.get("version") != MANIFEST_VERSION:
        raise DataError(f"unsupported manifest version {manifest.get('version')}")

    cloud = parse_gaussian_ply(ply)
    missing = [name for name in EXPORT_FIELDS if name not in cloud.extras]
    if missing:
        raise SceneFormatError("annotated PLY lacks property fields", property_name=missing[0])
    if cloud.count != manifest.get("count"):
        raise DataError(f"manifest count {manifest.get('count')} does not match {cloud.count} vertices")

    values = {name: cloud.extras[name] for name in EXPORT_FIELDS}
    field = PropertyField(
        material=values["material_id"].astype(np.int64),
        provenance=values["provenance"].astype(np.uint8),
        source=values["source"].astype(np.int64),
        **{name: values[name].astype(np.float64) for name in SCALAR_FIELDS},
    )
    base = dataclasses.replace(
        cloud, extras={k: v for k, v in cloud.extras.items() if k not in EXPORT_FIELDS}
    )
    library_from_snapshot(manifest["library"])
    return AnnotatedScene(cloud=base, field=field, library=manifest["library"], provenance=manifest.get("provenance", {}))


def _histogram_rows(name: str, values: np.ndarray) -> List[str]:
    values = values[np.isfinite(values)]
    if len(values) == 0:
        return []
    counts, edges = np.histogram(values, bins=HISTOGRAM_BINS)
    return [f"{name},{float(edges[i])!r},{float(edges[i + 1])!r},{int(c)}" for i, c in enumerate(counts)]


def export_summary(scene: AnnotatedScene, parts: Optional[Sequence[Part]] = None) -> str:
    """Per-material counts, per-part volumes and masses, property histograms"""
    field = scene.field
    ids = sorted(m["material_id"] for m in scene.library.get("materials", []))
    densities: Dict[str, float] = {
        m["material_id"]: m["density"]["nominal"] for m in scene.library.get("materials", [])
    }

    lines = ["[materials]", "material_id,ordinal,gaussians"]
    for ordinal, count in zip(*np.unique(field.material, return_counts=True)):
        name = ids[ordinal - 1] if 1 <= ordinal <= len(ids) else "unresolved"
        lines.append(f"{name},{int(ordinal)},{int(count)}")

    lines += ["", "[parts]", "part_id,material_id,gaussians,volume_m3,mass_kg"]
    for part in parts or ():
        mass = densities[part.material_id] * part.volume
        lines.append(f"{part.part_id},{part.material_id},{len(part.indices)},{part.volume!r},{mass!r}")

    lines += ["", "[histograms]", "field,bin_lo,bin_hi,count"]
    for name in SCALAR_FIELDS:
        lines += _histogram_rows(name, getattr(field, name))
    return "\n".join(lines) + "\n"
