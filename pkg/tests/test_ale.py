import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from cardiosim.ale import AleLifting, ale_velocity, quality
from cardiosim.fem import box_mesh, tube_mesh


class TestQualityMetric:
    def test_lower_bound_on_random_maps(self):
        rng = np.random.default_rng(21)
        D = rng.standard_normal((1000, 3, 3))
        det = np.linalg.det(D)
        D[det < 0, 0] *= -1.0  # make every sample non-inverted
        q = quality(D)
        assert np.all(q >= 1.0 - 1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(22)
        D = np.eye(3)[None] + 0.4 * rng.standard_normal((200, 3, 3))
        D = D[np.linalg.det(D) > 0]
        for c in (0.01, 3.0, 250.0):
            assert np.allclose(quality(c * D), quality(D), rtol=1e-12, atol=1e-12)

    def test_reference_values(self):
        assert quality(np.eye(3)) == pytest.approx(1.0, abs=1e-14)
        R = Rotation.from_euler("xyz", [0.3, -1.1, 0.7]).as_matrix()
        assert quality(R) == pytest.approx(1.0, abs=1e-12)
        expect = 6.0 / (3.0 * 2.0 ** (2.0 / 3.0))
        assert quality(np.diag([2.0, 1.0, 1.0])) == pytest.approx(expect, abs=1e-12)

    def test_inverted_map_rejected(self):
        with pytest.raises(ValueError):
            quality(np.diag([-1.0, 1.0, 1.0]))


def test_ale_velocity_backward_difference():
    d_new = np.array([1.0, 2.0, 3.0])
    d_old = np.array([0.5, 2.0, 1.0])
    assert np.allclose(ale_velocity(d_new, d_old, 0.5), [1.0, 0.0, 4.0])


@pytest.fixture(scope="module")
def cube():
    mesh = box_mesh(4, 4, 4)
    # interface: zmax face; fixed: zmin face
    return mesh, AleLifting(mesh, interface_tags=(6,), fixed_tags=(5,))


class TestLifting:
    def test_zero_boundary_data_gives_zero(self, cube):
        mesh, lift = cube
        d = lift.solve(np.zeros(3 * mesh.num_vertices))
        assert np.allclose(d, 0.0, atol=1e-12)

    def test_translation_is_reproduced_exactly_on_dirichlet_nodes(self, cube):
        mesh, lift = cube
        disp = np.tile([0.05, 0.0, 0.0], mesh.num_vertices)
        d = lift.solve(disp).reshape(-1, 3)
        top = lift.interface_nodes
        assert np.max(np.abs(d[top] - [0.05, 0.0, 0.0])) < 1e-12
        bottom = lift.fixed_nodes
        assert np.max(np.abs(d[bottom])) < 1e-12

    def test_harmonic_linear_shear_field(self, cube):
        mesh, lift = cube
        # x-shift proportional to z solves Laplace exactly with these BCs
        disp = np.zeros((mesh.num_vertices, 3))
        disp[:, 0] = 0.1 * mesh.vertices[:, 2]
        d = lift.harmonic(disp.ravel()).reshape(-1, 3)
        assert np.allclose(d[:, 0], 0.1 * mesh.vertices[:, 2], atol=1e-9)
        assert np.allclose(d[:, 1:], 0.0, atol=1e-9)

    def test_nonlinear_lift_keeps_elements_valid_under_compression(self):
        mesh = tube_mesh(radius=0.01, length=0.04, n_rings=3, n_sectors=12,
                         n_layers=6)
        lift = AleLifting(mesh, interface_tags=(3,), fixed_tags=(1, 2))
        # squeeze the wall radially inward by 25% at mid-length
        v = mesh.vertices
        r = np.linalg.norm(v[:, :2], axis=1)
        bump = np.sin(np.pi * v[:, 2] / 0.04) ** 2
        disp = np.zeros((mesh.num_vertices, 3))
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[:, None] > 1e-12, v[:, :2] / r[:, None], 0.0)
        disp[:, :2] = -0.25 * 0.01 * bump[:, None] * unit
        d = lift.solve(disp.ravel())
        q = lift.cell_quality(d)
        assert np.all(np.isfinite(q))
        F = lift.deformation_gradient(d)
        assert np.linalg.det(F).min() > 0.0
        # Dirichlet data honored at the wall
        got = d.reshape(-1, 3)[lift.interface_nodes]
        want = disp[lift.interface_nodes]
        assert np.max(np.abs(got - want)) < 1e-10

    def test_identity_is_residual_free(self, cube):
        mesh, lift = cube
        F = lift.deformation_gradient(np.zeros(3 * mesh.num_vertices))
        q = lift.cell_quality(np.zeros(3 * mesh.num_vertices))
        r = lift._residual(F, q)
        assert np.allclose(r, 0.0, atol=1e-13)
