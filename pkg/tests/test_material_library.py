"""
Material library tests
"""
import pytest
import yaml

from src.core.errors import LibraryError, MaterialNotFoundError
from src.core.material_library import library_from_snapshot, load_library, normalize_name, unified_hardness
from src.models.schemas import EVALUATION_FAMILIES


def record(material_id="foo", family="metal", **overrides):
    entry = {
        "material_id": material_id,
        "family": family,
        "density": {"min": 100, "max": 200, "nominal": 150},
        "youngs_modulus": {"min": 1e9, "max": 2e9, "nominal": 1.5e9},
        "poisson_ratio": 0.3,
        "friction_mu": 0.5,
        "yield_stress": 1e7,
        "shore_hardness": {"scale": "D", "min": 40, "max": 60},
    }
    entry.update(overrides)
    return entry


def document(*records, **extra):
    doc = {"schema_version": 1, "materials": list(records)}
    doc.update(extra)
    return yaml.safe_dump(doc)


class TestLoading:
    """Test library loading and validation"""

    def test_seed_library_loads(self, library):
        """Test the packaged library covers every evaluation family"""
        families = {library.family_of(m) for m in library.candidates()}
        assert set(EVALUATION_FAMILIES) <= families

    def test_aluminum_density(self, library):
        """Test aluminum nominal density 2700"""
        assert library.lookup("aluminum").density.nominal == 2700

    def test_steel_range(self, library):
        """Test steel density range 7750-8050"""
        steel = library.lookup("steel").density
        assert (steel.min, steel.max) == (7750, 8050)

    def test_range_violation(self):
        """Test min > max is rejected"""
        bad = record(density={"min": 100, "max": 50, "nominal": 75})
        with pytest.raises(LibraryError, match="range violation"):
            load_library(document(bad))

    def test_nominal_outside_range(self):
        """Test nominal outside [min, max] is rejected"""
        bad = record(density={"min": 100, "max": 200, "nominal": 300})
        with pytest.raises(LibraryError):
            load_library(document(bad))

    def test_duplicate_ids(self):
        """Test duplicate material ids are rejected"""
        with pytest.raises(LibraryError, match="duplicate"):
            load_library(document(record(), record()))

    def test_unknown_family(self):
        """Test families outside the evaluation set need declaring"""
        with pytest.raises(LibraryError):
            load_library(document(record(family="stone")))
        library = load_library(document(record(family="stone"), extension_families=["stone"]))
        assert library.family_labels[-1] == "stone"

    def test_two_defaults(self):
        """Test at most one default per family"""
        with pytest.raises(LibraryError):
            load_library(document(record("a", default=True), record("b", default=True)))

    def test_schema_version(self):
        """Test unsupported schema versions are rejected"""
        with pytest.raises(LibraryError):
            load_library(yaml.safe_dump({"schema_version": 9, "materials": []}))

    def test_invalid_yaml(self):
        """Test unparseable documents are rejected"""
        with pytest.raises(LibraryError):
            load_library(b"materials: [")

    def test_snapshot_round_trip(self, library):
        """Test a snapshot rebuilds an identical library"""
        rebuilt = library_from_snapshot(library.snapshot())
        assert rebuilt.candidates() == library.candidates()
        assert rebuilt.snapshot() == library.snapshot()


class TestResolve:
    """Test free-text resolution"""

    def test_normalization(self, library):
        """Test case and whitespace are normalized"""
        assert library.resolve("Aluminum ").material_id == "aluminum"
        assert normalize_name("  Cotton  Fabric") == "cotton_fabric"

    def test_polyethylene(self, library):
        """Test polyethylene density range 930-970"""
        pe = library.resolve("polyethylene").density
        assert (pe.min, pe.max) == (930, 970)

    def test_alias(self, library):
        """Test aliases resolve to their record"""
        assert library.resolve("Aluminium").material_id == "aluminum"
        assert library.resolve("stainless steel").material_id == "steel"

    def test_family_default(self, library):
        """Test a family name falls back to the family default"""
        assert library.resolve("metal").material_id == "steel"

    def test_not_found(self, library):
        """Test unknown materials raise not-found"""
        with pytest.raises(MaterialNotFoundError):
            library.resolve("unobtainium")
        assert library.try_resolve("unobtainium") is None


class TestFamilies:
    """Test family lookups and ordinals"""

    @pytest.mark.parametrize(
        "material_id,family",
        [("copper", "metal"), ("glass", "glass"), ("polyethylene", "plastic")],
    )
    def test_family_of(self, library, material_id, family):
        """Test family membership"""
        assert library.family_of(material_id) == family

    def test_ordinals_stable(self, library):
        """Test ordinals are 1-based over sorted ids"""
        ids = library.candidates()
        assert [library.ordinal(m) for m in ids] == list(range(1, len(ids) + 1))
        assert library.by_ordinal(library.ordinal("oak")).material_id == "oak"

    def test_family_ordinals(self, library):
        """Test the ten evaluation families take ordinals 1-10"""
        assert library.family_ordinal("wood") == 1
        assert library.family_ordinal("leather") == 10
        with pytest.raises(MaterialNotFoundError):
            library.family_ordinal("unobtainium")

    def test_unified_hardness(self, library):
        """Test Shore A midpoints stay, Shore D midpoints shift by 100"""
        assert unified_hardness(library.lookup("leather")) == 70.0
        custom = load_library(document(record()))
        assert unified_hardness(custom.lookup("foo")) == 150.0
