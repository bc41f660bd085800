"""
Data-file-backed registry of candidate materials
"""
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml
from pydantic import ValidationError

from src.core.errors import LibraryError, MaterialNotFoundError
from src.models.schemas import EVALUATION_FAMILIES, MaterialRecord
from src.utils.logger import logger

SCHEMA_VERSION = 1
DEFAULT_LIBRARY_PATH = Path(__file__).resolve().parent.parent / "data" / "materials.yaml"


def normalize_name(text: str) -> str:
    """Lowercase, trim, collapse whitespace/hyphens to underscores"""
    text = text.strip().lower()
    return re.sub(r"[\s\-]+", "_", text)


class MaterialLibrary:
    """Immutable after load; lookups are safe from any thread"""

    def __init__(self, records: Dict[str, MaterialRecord], extension_families: Tuple[str, ...] = ()):
        self.records = dict(records)
        self.extension_families = tuple(extension_families)
        self.families: Dict[str, List[str]] = {}
        for material_id in sorted(self.records):
            self.families.setdefault(self.records[material_id].family, []).append(material_id)

        allowed = set(EVALUATION_FAMILIES) | set(self.extension_families)
        for record in self.records.values():
            if record.family not in allowed:
                raise LibraryError(f"material {record.material_id}: unknown family {record.family!r}")

        self._defaults: Dict[str, str] = {}
        for family, ids in self.families.items():
            flagged = [i for i in ids if self.records[i].default]
            if len(flagged) > 1:
                raise LibraryError(f"family {family} has more than one default record: {flagged}")
            self._defaults[family] = flagged[0] if flagged else ids[0]

        self._ordinals = {material_id: i for i, material_id in enumerate(sorted(self.records), 1)}
        self._by_ordinal = {i: material_id for material_id, i in self._ordinals.items()}

        self._aliases: Dict[str, str] = {}
        for material_id in sorted(self.records):
            for alias in self.records[material_id].aliases:
                key = normalize_name(alias)
                if key in self._aliases and self._aliases[key] != material_id:
                    raise LibraryError(f"alias {alias!r} maps to both {self._aliases[key]} and {material_id}")
                self._aliases[key] = material_id

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, material_id: str) -> bool:
        return material_id in self.records

    def lookup(self, material_id: str) -> MaterialRecord:
        try:
            return self.records[material_id]
        except KeyError:
            raise MaterialNotFoundError(material_id)

    def resolve(self, material_name: str) -> MaterialRecord:
        """Exact id, then normalized id/alias, then family default"""
        if material_name in self.records:
            return self.records[material_name]
        key = normalize_name(material_name)
        if key in self.records:
            return self.records[key]
        if key in self._aliases:
            return self.records[self._aliases[key]]
        if key in self._defaults:
            return self.records[self._defaults[key]]
        raise MaterialNotFoundError(material_name)

    def try_resolve(self, material_name: str) -> Optional[MaterialRecord]:
        try:
            return self.resolve(material_name)
        except MaterialNotFoundError:
            return None

    def family_of(self, material_id: str) -> str:
        return self.lookup(material_id).family

    def default_for(self, family: str) -> MaterialRecord:
        try:
            return self.records[self._defaults[family]]
        except KeyError:
            raise MaterialNotFoundError(family)

    def candidates(self) -> List[str]:
        return sorted(self.records)

    def ordinal(self, material_id: str) -> int:
        """Stable 1-based ordinal used in material maps"""
        try:
            return self._ordinals[material_id]
        except KeyError:
            raise MaterialNotFoundError(material_id)

    def by_ordinal(self, ordinal: int) -> MaterialRecord:
        try:
            return self.records[self._by_ordinal[int(ordinal)]]
        except KeyError:
            raise MaterialNotFoundError(f"ordinal {ordinal}")

    @property
    def family_labels(self) -> Tuple[str, ...]:
        return tuple(EVALUATION_FAMILIES) + self.extension_families

    def family_ordinal(self, family: str) -> int:
        try:
            return self.family_labels.index(family) + 1
        except ValueError:
            raise MaterialNotFoundError(family)

    def snapshot(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "extension_families": list(self.extension_families),
            "materials": [self.records[i].model_dump(mode="json") for i in sorted(self.records)],
        }


def _from_document(doc: Any, source: str) -> MaterialLibrary:
    if not isinstance(doc, dict):
        raise LibraryError(f"{source}: library must be a mapping")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise LibraryError(f"{source}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    entries = doc.get("materials")
    if not isinstance(entries, list):
        raise LibraryError(f"{source}: 'materials' must be a list")

    records: Dict[str, MaterialRecord] = {}
    for index, entry in enumerate(entries):
        try:
            record = MaterialRecord(**entry)
        except (ValidationError, TypeError) as e:
            name = entry.get("material_id", index) if isinstance(entry, dict) else index
            raise LibraryError(f"{source}: material {name}: {e}")
        if record.material_id in records:
            raise LibraryError(f"{source}: duplicate material id {record.material_id}")
        records[record.material_id] = record

    return MaterialLibrary(records, tuple(doc.get("extension_families") or ()))


def load_library(data: Union[bytes, str], source: str = "<library>") -> MaterialLibrary:
    """Parse and validate a library document"""
    try:
        doc = yaml.safe_load(data)
    except yaml.YAMLError as e:
        raise LibraryError(f"{source}: invalid YAML: {e}")
    library = _from_document(doc, source)
    logger.debug("Loaded material library", extra={"source": source, "materials": len(library)})
    return library


def load_library_file(path: Optional[Path] = None) -> MaterialLibrary:
    path = Path(path) if path is not None else DEFAULT_LIBRARY_PATH
    try:
        data = path.read_bytes()
    except OSError as e:
        raise LibraryError(f"cannot read material library {path}: {e}")
    return load_library(data, source=str(path))


def default_library() -> MaterialLibrary:
    return load_library_file(DEFAULT_LIBRARY_PATH)


def library_from_snapshot(snapshot: Dict[str, Any]) -> MaterialLibrary:
    return _from_document(snapshot, "<snapshot>")


def unified_hardness(record: MaterialRecord) -> float:
    """Midpoint of the record's Shore range on the 0-200 comparison axis"""
    shore = record.shore_hardness
    return shore.unified(shore.midpoint)
