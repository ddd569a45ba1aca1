"""Lagrange P1/P2 nodal finite-element spaces on tetrahedral meshes."""

from __future__ import annotations

import numpy as np

from .mesh import Mesh


def _p1_basis(bary: np.ndarray) -> np.ndarray:
    """(nq, 4) P1 values at barycentric points."""
    return bary.copy()


def _p1_dbasis() -> np.ndarray:
    """(4, 4) dN/dlambda, constant: basis b, barycentric k."""
    return np.eye(4)


_EDGES = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def _p2_basis(bary: np.ndarray) -> np.ndarray:
    """(nq, 10) P2 values: 4 vertex then 6 edge functions."""
    nq = len(bary)
    N = np.empty((nq, 10))
    for i in range(4):
        N[:, i] = bary[:, i] * (2 * bary[:, i] - 1)
    for e, (a, b) in enumerate(_EDGES):
        N[:, 4 + e] = 4 * bary[:, a] * bary[:, b]
    return N


def _p2_dbasis(bary: np.ndarray) -> np.ndarray:
    """(nq, 10, 4) dN/dlambda_k at barycentric points."""
    nq = len(bary)
    D = np.zeros((nq, 10, 4))
    for i in range(4):
        D[:, i, i] = 4 * bary[:, i] - 1
    for e, (a, b) in enumerate(_EDGES):
        D[:, 4 + e, a] = 4 * bary[:, b]
        D[:, 4 + e, b] = 4 * bary[:, a]
    return D


class FunctionSpace:
    """Scalar or 3-vector Lagrange space of degree 1 or 2.

    Scalar dofs are numbered by node (vertices first; P2 appends edge
    midpoints). Vector dofs interleave components: dof = 3*node + comp.
    """

    def __init__(self, mesh: Mesh, degree: int = 1, ncomp: int = 1):
        if degree not in (1, 2):
            raise ValueError("only P1 and P2 supported")
        self.mesh = mesh
        self.degree = degree
        self.ncomp = ncomp
        nv = mesh.num_vertices
        if degree == 1:
            self.num_nodes = nv
            self.cell_nodes = mesh.tets
            self.node_coords = mesh.vertices
            self.nodes_per_cell = 4
        else:
            edges = mesh.edges()
            ne = len(edges)
            self.num_nodes = nv + ne
            # map sorted edge pair -> edge node index
            key = edges[:, 0] * nv + edges[:, 1]
            order = np.argsort(key)
            sorted_key = key[order]
            cell_edge_nodes = np.empty((mesh.num_cells, 6), dtype=np.int64)
            for e, (a, b) in enumerate(_EDGES):
                pair = np.sort(mesh.tets[:, [a, b]], axis=1)
                k = pair[:, 0] * nv + pair[:, 1]
                idx = order[np.searchsorted(sorted_key, k)]
                cell_edge_nodes[:, e] = nv + idx
            self.cell_nodes = np.concatenate([mesh.tets, cell_edge_nodes], axis=1)
            self.node_coords = np.concatenate(
                [mesh.vertices, 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])]
            )
            self.nodes_per_cell = 10

    @property
    def num_dofs(self) -> int:
        return self.num_nodes * self.ncomp

    # -- tabulation ----------------------------------------------------------

    def basis_values(self, bary: np.ndarray) -> np.ndarray:
        """(nq, nodes_per_cell) scalar basis values at barycentric points."""
        return _p1_basis(bary) if self.degree == 1 else _p2_basis(bary)

    def basis_gradients(self, bary: np.ndarray) -> np.ndarray:
        """(nt, nq, nodes_per_cell, 3) physical gradients at barycentric points."""
        bg = self.mesh.barycentric_gradients()  # (nt, 4, 3)
        if self.degree == 1:
            nq = len(bary)
            return np.broadcast_to(bg[:, None, :, :], (self.mesh.num_cells, nq, 4, 3))
        D = _p2_dbasis(bary)  # (nq, 10, 4)
        return np.einsum("qbk,tkx->tqbx", D, bg)

    # -- nodal helpers ---------------------------------------------------------

    def interpolate(self, func) -> np.ndarray:
        """Nodal interpolation of func(coords (n,3)) -> (n,) or (n,3)."""
        vals = np.asarray(func(self.node_coords), dtype=float)
        if self.ncomp == 1:
            return vals.reshape(self.num_nodes)
        return vals.reshape(self.num_nodes, 3)

    def nodes_on_facet_tags(self, tags) -> np.ndarray:
        """Node indices lying on boundary facets with the given tags."""
        mesh = self.mesh
        verts = mesh.vertices_on_tags(tags)
        if self.degree == 1:
            return verts
        tags = np.atleast_1d(tags)
        mask = np.isin(mesh.facet_tags, tags)
        tris = mesh.boundary_facets[mask]
        pairs = np.concatenate(
            [np.sort(tris[:, [a, b]], axis=1) for a, b in [(0, 1), (0, 2), (1, 2)]]
        )
        pairs = np.unique(pairs, axis=0)
        edges = mesh.edges()
        nv = mesh.num_vertices
        key = edges[:, 0] * nv + edges[:, 1]
        order = np.argsort(key)
        sorted_key = key[order]
        k = pairs[:, 0] * nv + pairs[:, 1]
        pos = np.searchsorted(sorted_key, k)
        valid = (pos < len(sorted_key)) & (sorted_key[np.minimum(pos, len(sorted_key) - 1)] == k)
        enodes = nv + order[pos[valid]]
        return np.unique(np.concatenate([verts, enodes]))

    def vector_dofs(self, nodes: np.ndarray) -> np.ndarray:
        """Flattened vector dof indices (all components) for the given nodes."""
        nodes = np.asarray(nodes)
        return (3 * nodes[:, None] + np.arange(3)[None, :]).ravel()

    def quad_coords(self, bary: np.ndarray) -> np.ndarray:
        """(nt, nq, 3) physical coordinates of barycentric quadrature points."""
        x = self.mesh.vertices[self.mesh.tets]  # (nt,4,3)
        return np.einsum("qk,tkx->tqx", bary, x)
