import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cardiosim.fem import FunctionSpace, box_mesh, tube_with_wall
from cardiosim.fibers import (
    blend_coefficient,
    blend_potential,
    cell_gradient,
    fiber_frame,
    generate_fibers,
    harmonic_interpolant,
)


@pytest.fixture(scope="module")
def slab():
    # unit slab, transmural direction z: tag 5 = zmin (endo), 6 = zmax (epi)
    return box_mesh(4, 4, 4)


class TestTransmuralPotential:
    def test_slab_potential_is_linear_in_z(self, slab):
        space = FunctionSpace(slab, degree=1)
        phi = harmonic_interpolant(space, [((5,), 0.0), ((6,), 1.0)])
        assert np.allclose(phi, slab.vertices[:, 2], atol=1e-9)

    def test_discrete_maximum_principle(self, slab):
        space = FunctionSpace(slab, degree=1)
        phi = harmonic_interpolant(space, [((5,), 0.25), ((6,), 0.75)])
        assert phi.min() >= 0.25 - 1e-9 and phi.max() <= 0.75 + 1e-9

    def test_cell_gradient_of_linear_field(self, slab):
        space = FunctionSpace(slab, degree=1)
        f = 2.0 * slab.vertices[:, 0] - 3.0 * slab.vertices[:, 2]
        g = cell_gradient(space, f)
        assert np.allclose(g, [2.0, 0.0, -3.0], atol=1e-12)


class TestFiberFrame:
    def test_orthonormal_right_handed(self, slab):
        f0, s0, n0, phi = generate_fibers(slab, (5,), (6,), axis=(0, 1, 0))
        for a in (f0, s0, n0):
            assert np.allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-10)
        assert np.max(np.abs(np.sum(f0 * s0, axis=1))) < 1e-10
        assert np.max(np.abs(np.sum(f0 * n0, axis=1))) < 1e-10
        assert np.max(np.abs(np.cross(f0, s0) - n0)) < 1e-10

    def test_slab_helix_angle_matches_hand_trig(self, slab):
        # phi = z, sheet = +z, axis = +y, so e_circ = z x y = -x and the
        # fiber is -cos(a) x + sin(a) y with a interpolated in z
        space = FunctionSpace(slab, degree=1)
        phi = slab.vertices[:, 2].copy()
        f0, s0, n0 = fiber_frame(space, phi, (0, 1, 0), 60.0, -60.0)
        phi_cell = phi[slab.tets].mean(axis=1)
        alpha = np.deg2rad(60.0 * (1 - 2 * phi_cell))
        assert np.allclose(s0, [0, 0, 1], atol=1e-12)
        assert np.allclose(f0[:, 0], -np.cos(alpha), atol=1e-12)
        assert np.allclose(f0[:, 1], np.sin(alpha), atol=1e-12)
        assert np.allclose(f0[:, 2], 0.0, atol=1e-12)

    def test_midwall_angle_is_mean_of_endpoints(self, slab):
        f0, s0, n0, phi = generate_fibers(slab, (5,), (6,), (0, 1, 0),
                                          angle_endo_deg=60.0, angle_epi_deg=-60.0)
        phi_cell = phi[slab.tets].mean(axis=1)
        mid = np.argmin(np.abs(phi_cell - 0.5))
        angle = np.rad2deg(np.arctan2(f0[mid, 1], -f0[mid, 0]))
        expected = 60.0 * (1 - 2 * phi_cell[mid])
        assert angle == pytest.approx(expected, abs=1.0)

    def test_axis_parallel_to_normal_raises(self, slab):
        space = FunctionSpace(slab, degree=1)
        phi = slab.vertices[:, 2].copy()
        with pytest.raises(ValueError):
            fiber_frame(space, phi, (0, 0, 1), 60.0, -60.0)

    def test_tube_wall_fibers_are_tangent(self):
        _, solid, _ = tube_with_wall(radius=0.01, thickness=0.003, length=0.04,
                                     n_sectors=12, n_rings=2, n_layers=4,
                                     n_wall=2)
        f0, s0, n0, phi = generate_fibers(solid, (3,), (4,), axis=(0, 0, 1))
        # sheet direction is radial, fibers have no radial component
        centroids = solid.vertices[solid.tets].mean(axis=1)
        radial = centroids.copy()
        radial[:, 2] = 0.0
        radial /= np.linalg.norm(radial, axis=1, keepdims=True)
        # chordal faceting of the 12-sector cylinder limits the accuracy
        assert np.max(np.abs(np.sum(f0 * radial, axis=1))) < 0.15
        assert np.min(np.sum(s0 * radial, axis=1)) > 0.95


class TestBlend:
    def test_endpoints_and_plateau(self):
        assert blend_coefficient(0.0, 0.2) == 0.0
        assert blend_coefficient(0.2, 0.2) == pytest.approx(1.0)
        assert blend_coefficient(0.7, 0.2) == pytest.approx(1.0)
        assert blend_coefficient(0.1, 0.2) == pytest.approx(0.5)

    @given(st.floats(min_value=0.0, max_value=1.0),
           st.floats(min_value=0.01, max_value=1.0))
    @settings(max_examples=200, deadline=None)
    def test_bounded(self, psi, psi_th):
        c = blend_coefficient(psi, psi_th)
        assert 0.0 <= c <= 1.0 + 1e-15

    def test_monotone_and_c1_at_threshold(self):
        psi = np.linspace(0.0, 0.4, 4001)
        c = blend_coefficient(psi, 0.2)
        assert np.all(np.diff(c) >= -1e-15)
        # slope from the left at psi_th vanishes, matching the plateau
        h = 1e-6
        left = (blend_coefficient(0.2, 0.2) - blend_coefficient(0.2 - h, 0.2)) / h
        assert abs(left) < 1e-4

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            blend_coefficient(0.5, 0.0)

    def test_blend_potential_on_tube_wall(self):
        _, solid, _ = tube_with_wall(radius=0.01, thickness=0.003, length=0.04,
                                     n_sectors=8, n_rings=2, n_layers=4,
                                     n_wall=2)
        psi = blend_potential(solid, vessel_tags=(1, 2), myocardial_tags=(4,))
        # P1 Laplace can overshoot slightly on non-acute tets
        assert psi.min() >= -1e-2 and psi.max() <= 1.0 + 1e-2
        rings = FunctionSpace(solid, 1).nodes_on_facet_tags((1, 2))
        assert np.allclose(psi[rings], 0.0, atol=1e-9)
