"""
Mass, hardness, grasping-force and calibration tests
"""
import math

import numpy as np
import pytest
import yaml

from src.core.calibration import CalibrationCurve, load_gripper_profile, to_normalized_command
from src.core.errors import CalibrationError, PhysicsInputError, UnresolvedSceneError
from src.core.lifting import build_field
from src.core.material_library import load_library
from src.core.physics import (
    G,
    estimate_mass,
    f_max,
    f_max_branches,
    f_min,
    f_min_from_mass,
    f_star,
    hardness_at,
    plan_grasp,
)
from src.core.rasterizer import render_depth
from src.core.volumes import estimate_volumes
from src.models.scene import CameraModel, GaussianCloud, Part, Provenance
from src.models.schemas import CalibrationSample, GripperProfile, SurfaceSpec

LINEAR = [CalibrationSample(command=n, force=0.4 * n) for n in range(15, 101, 5)]


def uniform_cube(count=30000, side=0.1, seed=3):
    rng = np.random.default_rng(seed)
    points = rng.uniform(0.0, side, (count, 3))
    return GaussianCloud.from_arrays(points, np.full(count, 0.9), np.full((count, 3), 0.002))


def resolved(cloud, library, material_id):
    n = cloud.count
    material = np.full(n, library.ordinal(material_id))
    return build_field(material, np.full(n, Provenance.VOTED, dtype=np.uint8), np.full(n, -1), library)


def part(volume, material_id="aluminum", part_id=1):
    return Part(
        part_id=part_id,
        material_id=material_id,
        volume=volume,
        indices=np.arange(1),
        voxels=np.zeros((1, 3), dtype=np.int64),
        origin=np.zeros(3),
        voxel_size=0.005,
    )


def block_library(density=1000.0):
    """One block material: rho `density`, mu 0.5, E 1e9, sigma_y 5e7"""
    doc = {
        "schema_version": 1,
        "materials": [
            {
                "material_id": "block",
                "family": "plastic",
                "density": {"min": 0.9 * density, "max": 1.1 * density, "nominal": density},
                "youngs_modulus": {"min": 5e8, "max": 2e9, "nominal": 1e9},
                "poisson_ratio": 0.35,
                "friction_mu": 0.5,
                "yield_stress": 5e7,
                "shore_hardness": {"scale": "D", "min": 40, "max": 60},
            }
        ],
    }
    return load_library(yaml.safe_dump(doc))


@pytest.fixture
def gripper():
    """G = (1, 40), eta = 0.1, linear calibration F = 0.4 N_GF"""
    return GripperProfile(force_range=(1.0, 40.0), eta=0.1, calibration=LINEAR, poly_degree=1)


@pytest.fixture
def unit_density_library():
    """One block material: rho 1000, mu 0.5, E 1e9, sigma_y 5e7"""
    return block_library()


class TestForceBounds:
    """Test F_min and F_max"""

    def test_f_min_one_kilogram(self):
        """Test 1 kg, theta 0, mu 0.5 gives 9.8 N"""
        assert f_min_from_mass(1.0, 0.5, 0.0) == 9.8

    def test_f_min_axial_gravity(self):
        """Test theta = pi/2 clamps to zero"""
        assert f_min_from_mass(1.0, 0.5, math.pi / 2) == 0.0

    def test_f_min_massless(self):
        """Test a massless object needs no force"""
        assert f_min_from_mass(0.0, 0.5) == 0.0

    def test_f_min_bad_friction(self):
        """Test non-positive mu is rejected"""
        with pytest.raises(PhysicsInputError):
            f_min_from_mass(1.0, 0.0)

    def test_f_max_bending_branch(self):
        """Test A 0.00011, E 1e9, d 0.002, kappa 0.5, sigma 5e7 gives 55 N"""
        surface = SurfaceSpec(area=0.00011, thickness=0.002, kappa_max=0.5)
        assert f_max(surface, 1e9, 5e7) == pytest.approx(55.0, rel=1e-9)

    def test_f_max_yield_branch(self):
        """Test a weak yield stress governs"""
        surface = SurfaceSpec(area=0.00011, thickness=0.002, kappa_max=0.5)
        assert f_max(surface, 1e9, 1e4) == pytest.approx(1.1, rel=1e-9)

    def test_f_max_bad_thickness(self):
        """Test non-positive thickness is rejected"""
        with pytest.raises(PhysicsInputError):
            f_max_branches(0.00011, 1e9, 0.0, 0.5, 5e7)


class TestFStar:
    """Test the optimal force choice"""

    def test_feasible(self, gripper):
        """Test F_min 2, F_max 10 gives F* 6 inside (2.8, 9.2)"""
        plan = f_star(2.0, 10.0, gripper)
        assert plan.feasible
        assert plan.f_star == pytest.approx(6.0)
        assert plan.delta_f == pytest.approx(8.0)
        assert plan.bounds == pytest.approx((2.8, 9.2))

    def test_infeasible(self, gripper):
        """Test F_min 50 > F_max 10 gives clip(30, G) and no feasibility"""
        plan = f_star(50.0, 10.0, gripper)
        assert not plan.feasible
        assert plan.f_star == 30.0
        assert plan.bounds is None

    def test_degenerate(self, gripper):
        """Test F_min = F_max takes the infeasible branch"""
        plan = f_star(5.0, 5.0, gripper)
        assert not plan.feasible
        assert plan.f_star == 5.0

    def test_infeasible_clipped(self, gripper):
        """Test the infeasible midpoint is clipped into G"""
        assert f_star(200.0, 100.0, gripper).f_star == 40.0


class TestForceProperties:
    """Test force planning over random parameterizations"""

    def test_random_parameterizations(self):
        """Test monotonicity, clamping, F* in G and eta containment on 1000 cases"""
        rng = np.random.default_rng(21)
        for _ in range(1000):
            m1, m2 = np.sort(rng.uniform(0.0, 5.0, 2))
            mu = rng.uniform(0.05, 1.5)
            theta = rng.uniform(0.0, math.pi / 2)
            a, b = f_min_from_mass(m1, mu, theta), f_min_from_mass(m2, mu, theta)
            assert 0.0 <= a <= b

            area, e, d, kappa, sigma = rng.uniform(1e-5, 1e-3), rng.uniform(1e6, 1e11), rng.uniform(1e-4, 1e-2), rng.uniform(0.1, 1.0), rng.uniform(1e4, 1e9)
            low = min(f_max_branches(area, e, d, kappa, sigma))
            high = min(f_max_branches(area, e * 2, d, kappa, sigma))
            assert low <= high

            lo = rng.uniform(0.5, 10.0)
            hi = lo + rng.uniform(1.0, 60.0)
            eta = rng.uniform(0.0, 0.5)
            gripper = GripperProfile(force_range=(lo, hi), eta=eta)
            fa, fb = rng.uniform(0.0, 100.0, 2)
            plan = f_star(fa, fb, gripper)
            assert lo <= plan.f_star <= hi
            assert plan.feasible == (fa < fb)
            if plan.feasible and plan.delta_f > 0:
                lower, upper = plan.bounds
                assert lower - 1e-9 <= plan.f_star <= upper + 1e-9

    def test_f_min_nonincreasing_in_friction(self):
        """Test a grippier surface never needs more squeeze"""
        rng = np.random.default_rng(22)
        for _ in range(1000):
            mass = rng.uniform(0.0, 10.0)
            theta = rng.uniform(0.0, math.pi / 2)
            mu_low, mu_high = np.sort(rng.uniform(0.01, 2.0, 2))
            assert f_min_from_mass(mass, mu_high, theta) <= f_min_from_mass(mass, mu_low, theta)

    @pytest.mark.parametrize("scale", [0.25, 2.0, 7.5])
    def test_f_min_density_linearity(self, scale):
        """Test scaling every density by c scales F_min by c"""
        parts = [part(0.001, "block"), part(0.0035, "block", part_id=2)]
        base = f_min(parts, block_library(), 0.3, 0.5)
        scaled = f_min(parts, block_library(1000.0 * scale), 0.3, 0.5)
        assert base > 0
        assert scaled == pytest.approx(scale * base, rel=1e-12)

    @pytest.mark.parametrize("argument", ["area", "thickness", "kappa_max", "yield_stress", "youngs_modulus"])
    def test_f_max_nondecreasing(self, argument):
        """Test growing any one F_max input never lowers F_max"""
        rng = np.random.default_rng(23)
        for _ in range(500):
            values = {
                "area": rng.uniform(1e-5, 1e-3),
                "youngs_modulus": rng.uniform(1e6, 1e11),
                "thickness": rng.uniform(1e-4, 1e-2),
                "kappa_max": rng.uniform(0.1, 1.0),
                "yield_stress": rng.uniform(1e4, 1e9),
            }
            before = min(f_max_branches(**values))
            values[argument] *= rng.uniform(1.0, 10.0)
            assert before <= min(f_max_branches(**values))

    def test_density_linearity(self, library):
        """Test mass scales with volume and adds over parts"""
        one = estimate_mass([part(0.001)], library)
        assert one == pytest.approx(2.7)
        assert estimate_mass([part(0.002)], library) == pytest.approx(2 * one)
        assert estimate_mass([part(0.001), part(0.001, part_id=2)], library) == pytest.approx(2 * one)

    def test_additivity(self, unit_density_library):
        """Test 1 kg + 2 kg parts give 3 kg and the summed F_min"""
        parts = [part(0.001, "block"), part(0.002, "block", part_id=2)]
        mass = estimate_mass(parts, unit_density_library)
        assert mass == pytest.approx(3.0)
        assert f_min_from_mass(mass, 0.5) == pytest.approx(3 * 9.8)

    def test_no_parts(self, library):
        """Test an empty decomposition weighs nothing"""
        assert estimate_mass([], library) == 0.0


class TestVolumes:
    """Test voxel volumes and part decomposition"""

    def test_single_gaussian(self, library):
        """Test one Gaussian occupies one voxel"""
        cloud = GaussianCloud.from_arrays([[0.0, 0.0, 0.0]], [0.9], [[0.01, 0.01, 0.01]])
        decomposition = estimate_volumes(cloud, resolved(cloud, library, "oak"), library, voxel_size=0.005)
        assert len(decomposition.parts) == 1
        assert decomposition.parts[0].volume == 0.005**3

    def test_aluminum_cube(self, library):
        """Test a 0.1 m aluminum cube weighs 2.7 kg within 5%"""
        cloud = uniform_cube()
        decomposition = estimate_volumes(cloud, resolved(cloud, library, "aluminum"), library, voxel_size=0.005)
        assert estimate_mass(decomposition.parts, library) == pytest.approx(2.7, rel=0.05)

    def test_separated_clusters(self, library):
        """Test two distant same-material clusters become two parts"""
        a = uniform_cube(3000, 0.03, seed=1)
        far = a.positions + [0.5, 0.0, 0.0]
        cloud = GaussianCloud.from_arrays(
            np.vstack([a.positions, far]), np.full(6000, 0.9), np.full((6000, 3), 0.002)
        )
        decomposition = estimate_volumes(cloud, resolved(cloud, library, "oak"), library, voxel_size=0.005)
        assert len(decomposition.parts) == 2
        assert decomposition.parts[0].volume == pytest.approx(decomposition.parts[1].volume)

    def test_unresolved_rejected(self, library):
        """Test unresolved fields are rejected"""
        cloud = uniform_cube(10)
        field = build_field(np.zeros(10), np.full(10, Provenance.UNRESOLVED), np.full(10, -1), library)
        with pytest.raises(UnresolvedSceneError):
            estimate_volumes(cloud, field, library)

    def test_bad_voxel_size(self, library):
        """Test the voxel size must be positive"""
        cloud = uniform_cube(10)
        with pytest.raises(PhysicsInputError):
            estimate_volumes(cloud, resolved(cloud, library, "oak"), library, voxel_size=0.0)


class TestHardness:
    """Test per-pixel hardness queries"""

    @staticmethod
    def query(library, material_id, pixel=(50, 50)):
        cloud = GaussianCloud.from_arrays([[0.0, 0.0, 2.0]], [0.99], [[0.05, 0.05, 0.05]])
        cam = CameraModel.pinhole(100, 100, 50, 50, 100, 100, view_id="c")
        field = resolved(cloud, library, material_id)
        return hardness_at(pixel, cam, cloud, field, render_depth(cloud, cam), library)

    def test_shore_a(self, library):
        """Test leather reads Shore A 70"""
        assert self.query(library, "leather") == ("A", 70.0)

    def test_shore_d_unified(self, unit_density_library):
        """Test Shore D 40-60 reads 150 on the unified axis"""
        assert self.query(unit_density_library, "block") == ("D", 150.0)

    def test_background(self, library):
        """Test an empty pixel is an error"""
        with pytest.raises(PhysicsInputError):
            self.query(library, "leather", pixel=(0, 0))


class TestCalibration:
    """Test the normalized-command calibration"""

    def test_linear_inversion(self):
        """Test F = 0.4 N_GF inverts 20 N to N_GF 50"""
        curve = CalibrationCurve(LINEAR, 1, (15, 100))
        assert curve.invert(20.0) == pytest.approx(50.0, abs=0.1)

    def test_clamped(self, gripper):
        """Test forces outside the calibrated range clamp to the enabled range"""
        assert to_normalized_command(1.0, gripper) == 15.0
        assert to_normalized_command(45.0, gripper) == 100.0

    def test_default_profile_round_trip(self):
        """Test the packaged profile round-trips within 1% of F_hi"""
        profile = load_gripper_profile()
        curve = CalibrationCurve.from_profile(profile)
        lo, hi = curve.force_range
        for force in np.linspace(0.0, 45.0, 91):
            command = curve.invert(force)
            assert 15.0 <= command <= 100.0
            assert abs(curve.force(command) - min(max(force, lo), hi)) <= 0.01 * profile.force_range[1]

    def test_nonlinear_round_trip(self):
        """Test a monotone quadratic calibration round-trips within 1% of F_hi"""
        samples = [CalibrationSample(command=n, force=2.0 + 0.1 * n + 0.003 * n * n) for n in range(15, 101, 5)]
        profile = GripperProfile(force_range=(1.0, 45.0), calibration=samples, poly_degree=2)
        curve = CalibrationCurve.from_profile(profile)
        lo, hi = curve.force_range
        assert lo == pytest.approx(4.175)
        assert hi == pytest.approx(42.0)

        previous = 15.0
        for force in np.linspace(0.0, 45.0, 181):
            command = to_normalized_command(force, profile)
            assert previous <= command <= 100.0
            assert abs(curve.force(command) - min(max(force, lo), hi)) <= 0.01 * profile.force_range[1]
            previous = command

    def test_non_monotone(self):
        """Test a fit that decreases inside the enabled range is rejected"""
        samples = [CalibrationSample(command=n, force=40.0 - 0.02 * (n - 55) ** 2) for n in range(15, 101, 5)]
        with pytest.raises(CalibrationError):
            CalibrationCurve(samples, 2, (15, 100))

    def test_too_few_samples(self):
        """Test a degree-5 fit needs six samples"""
        with pytest.raises(CalibrationError):
            CalibrationCurve(LINEAR[:3], 5, (15, 100))


class TestPlanGrasp:
    """Test the composed grasp plan"""

    @pytest.fixture
    def block(self, unit_density_library):
        """0.1 m cube of the unit-density block material, 1 kg"""
        cloud = uniform_cube()
        return cloud, resolved(cloud, unit_density_library, "block")

    def test_one_kilogram_block(self, block, unit_density_library, gripper):
        """Test a 1 kg block with mu 0.5 plans F_min of 9.8 N"""
        cloud, field = block
        plan, decomposition = plan_grasp(cloud, field, gripper, unit_density_library)
        mass = plan.details["mass_kg"]
        assert mass == pytest.approx(1.0, rel=0.05)
        assert plan.f_min == pytest.approx(0.5 * mass * G / 0.5)
        assert plan.f_min == pytest.approx(9.8, rel=0.05)
        assert decomposition.force_bearing_part == 1
        assert plan.feasible
        assert 15.0 <= plan.normalized_command <= 100.0
        assert set(plan.details["baselines"]) == {"MinGF", "MidGF", "MaxGF"}

    def test_measured_thickness(self, block, unit_density_library, gripper):
        """Test the slab through the centroid spans the cube"""
        cloud, field = block
        plan, decomposition = plan_grasp(cloud, field, gripper, unit_density_library)
        assert decomposition.surface.thickness == pytest.approx(0.1)
        assert plan.f_max == pytest.approx(0.5 * 0.00011 * 1e9 * 0.1 * 0.5)

    def test_surface_overrides(self, block, unit_density_library, gripper):
        """Test explicit A, d and kappa give the 55 N bending bound"""
        cloud, field = block
        plan, _ = plan_grasp(
            cloud, field, gripper, unit_density_library,
            area=0.00011, thickness=0.002, kappa_max=0.5,
        )
        assert plan.f_max == pytest.approx(55.0, rel=1e-9)
        assert plan.details["f_max_branch"] == "bending"

    def test_unresolved(self, unit_density_library, gripper):
        """Test planning refuses unresolved fields"""
        cloud = uniform_cube(10)
        field = build_field(np.zeros(10), np.full(10, Provenance.UNRESOLVED), np.full(10, -1), unit_density_library)
        with pytest.raises(UnresolvedSceneError):
            plan_grasp(cloud, field, gripper, unit_density_library)
