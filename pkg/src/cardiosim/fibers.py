"""Rule-based myocardial fiber generation on idealized geometries.

A transmural harmonic potential (0 on the inner surface, 1 on the outer)
gives the sheet direction; fibers lie in the tangent plane, rotated from
angle_endo at the inner wall to angle_epi at the outer wall. A second
harmonic potential blends the anisotropic myocardial material into the
isotropic vessel material near inlet and outlet rings.
"""

from __future__ import annotations

import numpy as np

from .fem import FunctionSpace, Mesh, SparseSystem, assemble_stiffness, solve_cg


def harmonic_interpolant(space: FunctionSpace, boundary_values: list) -> np.ndarray:
    """Solve Laplace's equation with piecewise-constant Dirichlet data.

    boundary_values: list of (facet_tags, value) pairs. Returns nodal values.
    Satisfies a discrete maximum principle on reasonable meshes, so the
    result stays within the range of the prescribed values.
    """
    if space.ncomp != 1:
        raise ValueError("harmonic_interpolant needs a scalar space")
    A = assemble_stiffness(space)
    b = np.zeros(space.num_nodes)
    dofs, vals = [], []
    for tags, value in boundary_values:
        nodes = space.nodes_on_facet_tags(tags)
        dofs.append(nodes)
        vals.append(np.full(nodes.size, float(value)))
    dofs = np.concatenate(dofs)
    vals = np.concatenate(vals)
    dofs, keep = np.unique(dofs, return_index=True)
    sys = SparseSystem(A, b, dofs, vals[keep], symmetric=True).constrained()
    return solve_cg(sys.A, sys.b, tol=1e-12, max_iter=10 * space.num_nodes)


def cell_gradient(space: FunctionSpace, nodal: np.ndarray) -> np.ndarray:
    """Per-cell gradient of a P1 nodal field, shape (nt, 3)."""
    g = space.mesh.barycentric_gradients()
    return np.einsum("tk,tkx->tx", nodal[space.mesh.tets], g)


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def fiber_frame(space: FunctionSpace, phi: np.ndarray, axis,
                angle_endo_deg: float, angle_epi_deg: float):
    """Per-cell orthonormal frame (f0, s0, n0) from the transmural potential.

    s0 follows the transmural gradient, f0 lies in the wall tangent plane
    at the interpolated helix angle, and n0 = f0 x s0 closes a right-handed
    frame. axis is the global longitudinal direction used to seed the
    in-plane reference; it must not be parallel to the wall normal.
    """
    mesh = space.mesh
    grad = cell_gradient(space, phi)
    norms = np.linalg.norm(grad, axis=1)
    if np.any(norms < 1e-14):
        raise ValueError("transmural potential has a vanishing gradient")
    s0 = grad / norms[:, None]

    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    e_long = k[None, :] - (s0 @ k)[:, None] * s0
    tang = np.linalg.norm(e_long, axis=1)
    if np.any(tang < 1e-10):
        raise ValueError("longitudinal axis is parallel to the wall normal")
    e_long /= tang[:, None]
    e_circ = np.cross(s0, e_long)

    phi_cell = phi[mesh.tets].mean(axis=1)
    alpha = np.deg2rad(angle_endo_deg + (angle_epi_deg - angle_endo_deg) * phi_cell)
    f0 = np.cos(alpha)[:, None] * e_circ + np.sin(alpha)[:, None] * e_long
    n0 = np.cross(f0, s0)
    return f0, s0, n0


def generate_fibers(mesh: Mesh, endo_tags, epi_tags, axis,
                    angle_endo_deg: float = 60.0, angle_epi_deg: float = -60.0):
    """Transmural potential plus fiber frame in one call.

    Returns (f0, s0, n0, phi) with per-cell frames and nodal potential.
    """
    space = FunctionSpace(mesh, degree=1, ncomp=1)
    phi = harmonic_interpolant(space, [(endo_tags, 0.0), (epi_tags, 1.0)])
    f0, s0, n0 = fiber_frame(space, phi, axis, angle_endo_deg, angle_epi_deg)
    return f0, s0, n0, phi


def blend_potential(mesh: Mesh, vessel_tags, myocardial_tags) -> np.ndarray:
    """Harmonic field psi: 0 at vessel ends, 1 in contractile tissue."""
    space = FunctionSpace(mesh, degree=1, ncomp=1)
    return harmonic_interpolant(space, [(vessel_tags, 0.0), (myocardial_tags, 1.0)])


def blend_coefficient(psi, psi_th: float):
    """Smooth material blend c in [0, 1].

    c = 0 gives the isotropic vessel law, c = 1 the anisotropic myocardial
    law; the raised cosine makes the transition C1 at psi = psi_th.
    """
    if psi_th <= 0:
        raise ValueError("psi_th must be positive")
    x = np.minimum(np.asarray(psi, dtype=float), psi_th) / psi_th
    return 0.5 * (1.0 - np.cos(np.pi * x))
