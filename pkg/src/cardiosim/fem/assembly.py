"""Sparse FEM assembly: mass/stiffness operators and Dirichlet handling.

Assembly is fully vectorized over cells; duplicate (row, col) entries are
summed by scipy's COO->CSR conversion, which is deterministic for a fixed
mesh ordering (the deterministic-reduction mode required for bitwise
reproducibility).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, MeshError
from .quadrature import tet_rule, tri_rule
from .spaces import FunctionSpace


def scatter_csr(rows, cols, vals, shape) -> sp.csr_matrix:
    A = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape)
    return A.tocsr()


def _check_mesh(mesh: Mesh):
    vols = mesh.cell_volumes()
    bad = np.flatnonzero(vols <= 0)
    if len(bad):
        raise MeshError(f"degenerate element: cell {bad[0]} volume {vols[bad[0]]:.3e}")


def assemble_mass(space: FunctionSpace, coeff=None, degree: int | None = None) -> sp.csr_matrix:
    """Scalar mass matrix M_ij = int coeff phi_i phi_j.

    coeff: None, scalar, per-cell (nt,) or per-quad-point (nt, nq) values.
    """
    _check_mesh(space.mesh)
    if degree is None:
        degree = 2 * space.degree
    bary, w = tet_rule(degree)
    N = space.basis_values(bary)  # (nq, nb)
    vols = space.mesh.cell_volumes()
    c = _coeff_at_qp(coeff, space.mesh.num_cells, len(w))
    # element matrices: (nt, nb, nb)
    elem = np.einsum("q,tq,qa,qb->tab", w, c, N, N) * vols[:, None, None]
    dofs = space.cell_nodes
    rows = np.repeat(dofs, space.nodes_per_cell, axis=1)
    cols = np.tile(dofs, (1, space.nodes_per_cell))
    return scatter_csr(rows, cols, elem, (space.num_nodes, space.num_nodes))


def assemble_stiffness(space: FunctionSpace, tensor=None, degree: int | None = None) -> sp.csr_matrix:
    """Scalar stiffness K_ij = int grad(phi_i) . D grad(phi_j).

    tensor: None (identity), scalar, per-cell scalars (nt,), or per-cell
    3x3 tensors (nt, 3, 3).
    """
    _check_mesh(space.mesh)
    if degree is None:
        degree = 2 * (space.degree - 1) if space.degree > 1 else 0
        degree = max(degree, 1)
    bary, w = tet_rule(degree)
    G = space.basis_gradients(bary)  # (nt, nq, nb, 3)
    vols = space.mesh.cell_volumes()
    nt = space.mesh.num_cells
    if tensor is None:
        DG = G
    else:
        tensor = np.asarray(tensor, dtype=float)
        if tensor.ndim == 0:
            DG = G * tensor
        elif tensor.ndim == 1:
            DG = G * tensor[:, None, None, None]
        elif tensor.shape == (nt, 3, 3):
            DG = np.einsum("txy,tqby->tqbx", tensor, G)
        else:
            raise ValueError(f"unsupported tensor shape {tensor.shape}")
    elem = np.einsum("q,tqax,tqbx->tab", w, G, DG) * vols[:, None, None]
    dofs = space.cell_nodes
    rows = np.repeat(dofs, space.nodes_per_cell, axis=1)
    cols = np.tile(dofs, (1, space.nodes_per_cell))
    return scatter_csr(rows, cols, elem, (space.num_nodes, space.num_nodes))


def assemble_load(space: FunctionSpace, values, degree: int | None = None) -> np.ndarray:
    """Scalar load vector b_i = int f phi_i with f given per (cell, qp) or callable."""
    if degree is None:
        degree = 2 * space.degree
    bary, w = tet_rule(degree)
    N = space.basis_values(bary)
    vols = space.mesh.cell_volumes()
    if callable(values):
        xq = space.quad_coords(bary)
        f = np.asarray(values(xq.reshape(-1, 3))).reshape(space.mesh.num_cells, len(w))
    else:
        f = _coeff_at_qp(values, space.mesh.num_cells, len(w))
    elem = np.einsum("q,tq,qa->ta", w, f, N) * vols[:, None]
    b = np.zeros(space.num_nodes)
    np.add.at(b, space.cell_nodes, elem)
    return b


def _coeff_at_qp(coeff, nt: int, nq: int) -> np.ndarray:
    if coeff is None:
        return np.ones((nt, nq))
    coeff = np.asarray(coeff, dtype=float)
    if coeff.ndim == 0:
        return np.full((nt, nq), float(coeff))
    if coeff.ndim == 1:
        return np.broadcast_to(coeff[:, None], (nt, nq))
    return coeff


def boundary_mass(space: FunctionSpace, tags, degree: int = 2) -> sp.csr_matrix:
    """Scalar surface mass matrix over boundary facets with the given tags.

    Only P1 spaces are supported (all boundary terms in the solver act on
    P1 fields).
    """
    if space.degree != 1:
        raise NotImplementedError("boundary mass only for P1")
    mesh = space.mesh
    tags = np.atleast_1d(tags)
    tris = mesh.boundary_facets[np.isin(mesh.facet_tags, tags)]
    if len(tris) == 0:
        return sp.csr_matrix((space.num_nodes, space.num_nodes))
    bary, w = tri_rule(degree)
    N = bary  # P1 on a triangle
    x = mesh.vertices[tris]
    areas = 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)
    elem = np.einsum("q,qa,qb->ab", w, N, N)[None, :, :] * areas[:, None, None]
    rows = np.repeat(tris, 3, axis=1)
    cols = np.tile(tris, (1, 3))
    return scatter_csr(rows, cols, elem, (space.num_nodes, space.num_nodes))


@dataclass
class SparseSystem:
    """Linear system with Dirichlet constraints (symmetric elimination)."""

    A: sp.csr_matrix
    b: np.ndarray
    dirichlet_dofs: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    dirichlet_values: np.ndarray = field(default_factory=lambda: np.empty(0))
    symmetric: bool = False

    def constrained(self) -> "SparseSystem":
        """Apply Dirichlet constraints by row/column elimination.

        Keeps the matrix symmetric when it started symmetric, so CG remains
        applicable.
        """
        if len(self.dirichlet_dofs) == 0:
            return self
        n = self.A.shape[0]
        d = np.asarray(self.dirichlet_dofs, dtype=np.int64)
        vals = np.asarray(self.dirichlet_values, dtype=float)
        full = np.zeros(n)
        full[d] = vals
        # move known values to rhs (column elimination)
        b = self.b - self.A @ full
        keep = np.ones(n)
        keep[d] = 0.0
        D = sp.diags(keep)
        ones_d = np.zeros(n)
        ones_d[d] = 1.0
        A = D @ self.A @ D + sp.diags(ones_d)
        b = keep * b
        b[d] = vals
        return SparseSystem(A.tocsr(), b, symmetric=self.symmetric)
