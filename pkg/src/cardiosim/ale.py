"""ALE mesh motion: lifting of the interface displacement into the fluid
domain.

The baseline is a componentwise harmonic lift. The robust variant solves a
nonlinear pseudo-elastic problem whose stress stiffens elements as their
shape quality deteriorates, which keeps cells from inverting under large
wall motion:

    P(F) = (1/q) (I - (F F^T)^{-1})

with q the scale-invariant shape quality of the deformed element. q is
frozen at the previous Newton iterate, so each iteration is a standard
linearized solve; the identity map is an exact zero of the residual.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse.linalg import splu

from .fem import FunctionSpace, Mesh, SparseSystem, assemble_stiffness
from .fem.assembly import scatter_csr
from .fem.linalg import SolverError
from .solid import complex_step_tangent


def quality(D: np.ndarray) -> np.ndarray:
    """Shape quality q = |D|_F^2 / (3 det(D)^{2/3}) of non-inverted maps.

    Equals 1 for scaled rotations and grows as the element flattens;
    invariant under uniform scaling.
    """
    D = np.asarray(D, dtype=float)
    single = D.ndim == 2
    if single:
        D = D[None]
    det = np.linalg.det(D)
    if np.any(det <= 0):
        raise ValueError("quality metric needs a non-inverted map")
    frob2 = np.einsum("tij,tij->t", D, D)
    q = frob2 / (3.0 * det ** (2.0 / 3.0))
    return q[0] if single else q


def ale_velocity(d_new: np.ndarray, d_old: np.ndarray, dt: float) -> np.ndarray:
    """Mesh velocity by backward difference, attached to the moved nodes."""
    return (d_new - d_old) / dt


class AleLifting:
    """Lifts interface displacement data to the whole fluid mesh."""

    def __init__(self, mesh: Mesh, interface_tags, fixed_tags=()):
        self.mesh = mesh
        self.scalar = FunctionSpace(mesh, degree=1)
        self.interface_nodes = self.scalar.nodes_on_facet_tags(interface_tags)
        self.fixed_nodes = (self.scalar.nodes_on_facet_tags(fixed_tags)
                            if fixed_tags else np.array([], dtype=np.int64))
        self.grads = mesh.barycentric_gradients()
        self.vols = mesh.cell_volumes()
        self.edges = mesh.edge_matrices()
        self.ndof = 3 * mesh.num_vertices
        self._K_harmonic = assemble_stiffness(self.scalar)

    def _dirichlet(self, interface_disp):
        disp = interface_disp.reshape(-1, 3)
        nodes = np.concatenate([self.interface_nodes, self.fixed_nodes])
        values = np.concatenate([disp[self.interface_nodes],
                                 np.zeros((self.fixed_nodes.size, 3))])
        nodes, keep = np.unique(nodes, return_index=True)
        return nodes, values[keep]

    def harmonic(self, interface_disp: np.ndarray) -> np.ndarray:
        """Componentwise harmonic extension of the boundary displacement."""
        nodes, values = self._dirichlet(interface_disp)
        out = np.zeros((self.mesh.num_vertices, 3))
        for c in range(3):
            sys = SparseSystem(self._K_harmonic,
                               np.zeros(self.mesh.num_vertices),
                               nodes, values[:, c], symmetric=True).constrained()
            out[:, c] = splu(sys.A.tocsc()).solve(sys.b)
        return out.ravel()

    def deformation_gradient(self, d):
        dn = d.reshape(-1, 3)[self.mesh.tets]
        return np.einsum("tai,tak->tik", dn, self.grads) + np.eye(3)[None]

    def cell_quality(self, d):
        F = self.deformation_gradient(d)
        return quality(np.einsum("tik,tkj->tij", F, self.edges))

    def _pk1(self, F, q):
        FFt = np.einsum("tik,tjk->tij", F, F)
        return (np.eye(3, dtype=F.dtype)[None] - np.linalg.inv(FFt)) / q[:, None, None]

    def _residual(self, F, q):
        P = self._pk1(F, q)
        elem = np.einsum("tik,tak,t->tai", P, self.grads, self.vols)
        r = np.zeros(self.ndof)
        dofs = 3 * self.mesh.tets[:, :, None] + np.arange(3)[None, None, :]
        np.add.at(r, dofs.ravel(), elem.ravel())
        return r

    def _tangent(self, F, q):
        A = complex_step_tangent(lambda Fc: self._pk1(Fc, q), F)
        elem = np.einsum("tikjl,tak,tbl,t->taibj", A, self.grads, self.grads,
                         self.vols)
        dofs = 3 * self.mesh.tets[:, :, None] + np.arange(3)[None, None, :]
        rows = np.broadcast_to(dofs.reshape(-1, 4, 3, 1, 1), elem.shape).ravel()
        cols = np.broadcast_to(dofs.reshape(-1, 1, 1, 4, 3), elem.shape).ravel()
        return scatter_csr(rows, cols, elem.ravel(), (self.ndof, self.ndof))

    def solve(self, interface_disp: np.ndarray, d0=None, tol: float = 1e-10,
              max_newton: int = 25) -> np.ndarray:
        """Nonlinear lift; falls back to continuation if Newton stalls."""
        try:
            return self._newton(interface_disp, d0, tol, max_newton)
        except SolverError:
            d = None
            for frac in (0.25, 0.5, 0.75, 1.0):
                d = self._newton(frac * interface_disp.reshape(-1, 3).ravel(),
                                 d, tol, max_newton)
            return d

    def _newton(self, interface_disp, d0, tol, max_newton):
        nodes, values = self._dirichlet(interface_disp)
        dofs = (3 * nodes[:, None] + np.arange(3)[None, :]).ravel()
        vals = values.ravel()
        d = np.zeros(self.ndof) if d0 is None else d0.copy()
        scale = max(1.0, np.linalg.norm(vals))
        for _ in range(max_newton):
            F = self.deformation_gradient(d)
            D = np.einsum("tik,tkj->tij", F, self.edges)
            det = np.linalg.det(D)
            if np.any(det <= 0):
                raise SolverError("mesh motion inverted an element")
            q = quality(D)
            r = self._residual(F, q)
            K = self._tangent(F, q)
            sys = SparseSystem(K, -r, dofs, vals - d[dofs],
                               symmetric=False).constrained()
            du = splu(sys.A.tocsc()).solve(sys.b)
            d = d + du
            if np.linalg.norm(du) <= tol * scale:
                return d
        raise SolverError("ALE lifting Newton did not converge")
