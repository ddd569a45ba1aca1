"""Finite-strain solid mechanics for the heart wall.

Two hyperelastic laws: an exponential orthotropic myocardium model and a
nearly incompressible isotropic neo-Hookean law for vessel tissue, blended
per cell by a coefficient from the interface regularization field. Active
contraction adds a rank-one stress along the deformed fiber.

Displacements are piecewise linear, so the deformation gradient is constant
per cell and each Newton iteration costs one stress and one tangent
evaluation per cell. Tangents are computed by complex-step differentiation
of the stress, which is exact to machine precision and keeps the
constitutive code in one place.

Time stepping uses central differences for inertia inside an implicit
Newton solve; the epicardial support enters as a visco-elastic Robin
boundary term split into normal and tangential components.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fem import FunctionSpace, Mesh, SparseSystem, assemble_mass
from .fem.assembly import scatter_csr
from .fem.linalg import SolverError


@dataclass
class GuccioneParams:
    c: float = 880.0       # Pa
    a_ff: float = 8.0
    a_ss: float = 6.0
    a_nn: float = 3.0
    a_fs: float = 12.0
    a_fn: float = 3.0
    a_sn: float = 3.0
    kappa: float = 5.0e4   # Pa

    def coefficient_matrix(self) -> np.ndarray:
        return np.array([
            [self.a_ff, self.a_fs, self.a_fn],
            [self.a_fs, self.a_ss, self.a_sn],
            [self.a_fn, self.a_sn, self.a_nn],
        ])


@dataclass
class NeoHookeanParams:
    mu: float = 5.25e5     # Pa
    kappa: float = 1.0e6   # Pa


def _det33(F):
    return np.linalg.det(F)


def guccione_energy(F, f0, s0, n0, params: GuccioneParams):
    """Strain energy density of the exponential orthotropic law."""
    A = params.coefficient_matrix()
    R = np.stack([f0, s0, n0], axis=-1)          # columns are the frame
    C = np.einsum("tki,tkj->tij", F, F)
    E = 0.5 * (C - np.eye(3, dtype=C.dtype))
    Ef = np.einsum("tka,tkl,tlb->tab", R, E, R)  # E in fiber coordinates
    Q = np.einsum("ab,tab,tab->t", A, Ef, Ef)
    J = _det33(F)
    return 0.5 * params.c * (np.exp(Q) - 1.0) + 0.5 * params.kappa * (J - 1.0) * np.log(J)


def guccione_pk1(F, f0, s0, n0, params: GuccioneParams):
    A = params.coefficient_matrix()
    R = np.stack([f0, s0, n0], axis=-1)
    C = np.einsum("tki,tkj->tij", F, F)
    E = 0.5 * (C - np.eye(3, dtype=C.dtype))
    Ef = np.einsum("tka,tkl,tlb->tab", R, E, R)
    Q = np.einsum("ab,tab,tab->t", A, Ef, Ef)
    # S_dev = c exp(Q) R (A o Ef) R^T from dQ/dE = 2 R (A o Ef) R^T
    S = params.c * np.exp(Q)[:, None, None] * np.einsum(
        "tia,ab,tab,tjb->tij", R, A, Ef, R)
    J = _det33(F)
    Finv = np.linalg.inv(F)
    dWvol = 0.5 * params.kappa * (np.log(J) + (J - 1.0) / J)
    return np.einsum("tik,tkj->tij", F, S) + (J * dWvol)[:, None, None] * np.transpose(Finv, (0, 2, 1))


def neohookean_energy(F, params: NeoHookeanParams):
    J = _det33(F)
    I_C = np.einsum("tij,tij->t", F, F)
    iso = 0.5 * params.mu * (J ** (-2.0 / 3.0) * I_C - 3.0)
    vol = 0.25 * params.kappa * ((J - 1.0) ** 2 + np.log(J) ** 2)
    return iso + vol


def neohookean_pk1(F, params: NeoHookeanParams):
    J = _det33(F)
    I_C = np.einsum("tij,tij->t", F, F)
    Finv = np.linalg.inv(F)
    FinvT = np.transpose(Finv, (0, 2, 1))
    iso = params.mu * (J ** (-2.0 / 3.0))[:, None, None] * (
        F - (I_C / 3.0)[:, None, None] * FinvT)
    dWvol = 0.5 * params.kappa * ((J - 1.0) + np.log(J) / J)
    return iso + (J * dWvol)[:, None, None] * FinvT


def blended_pk1(F, f0, s0, n0, c_buf, guccione: GuccioneParams,
                neo: NeoHookeanParams):
    """Passive stress: c_buf weighted myocardium law plus vessel law."""
    c = np.asarray(c_buf, dtype=float)
    if c.ndim == 0:
        c = np.full(len(F), float(c))
    P = np.zeros_like(F)
    if np.any(c > 0):
        P = P + c[:, None, None] * guccione_pk1(F, f0, s0, n0, guccione)
    if np.any(c < 1):
        P = P + (1.0 - c)[:, None, None] * neohookean_pk1(F, neo)
    return P


def complex_step_tangent(pk1_fn, F, h: float = 1e-30):
    """dP/dF as a (nt, 3, 3, 3, 3) array via complex-step differentiation."""
    nt = len(F)
    A = np.empty((nt, 3, 3, 3, 3))
    Fc = F.astype(complex)
    for j in range(3):
        for l in range(3):
            Fp = Fc.copy()
            Fp[:, j, l] += 1j * h
            A[:, :, :, j, l] = pk1_fn(Fp).imag / h
    return A


@dataclass
class RobinSupport:
    tags: tuple
    k_perp: float = 2.0e5   # Pa/m
    k_par: float = 2.0e4
    c_perp: float = 2.0e4   # Pa s/m
    c_par: float = 2.0e3


def facet_scalar_mass():
    return np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def robin_matrices(mesh: Mesh, support: RobinSupport):
    """Stiffness-like and damping-like boundary operators (vector P1)."""
    areas, normals = mesh.facet_areas_normals()
    sel = np.isin(mesh.facet_tags, support.tags)
    m_loc = facet_scalar_mass()
    mats = []
    for kp, kt in ((support.k_perp, support.k_par),
                   (support.c_perp, support.c_par)):
        rows, cols, vals = [], [], []
        for fidx in np.where(sel)[0]:
            n = normals[fidx]
            block = kp * np.outer(n, n) + kt * (np.eye(3) - np.outer(n, n))
            verts = mesh.boundary_facets[fidx]
            for a in range(3):
                for b in range(3):
                    w = areas[fidx] * m_loc[a, b]
                    for i in range(3):
                        for j in range(3):
                            rows.append(3 * verts[a] + i)
                            cols.append(3 * verts[b] + j)
                            vals.append(w * block[i, j])
        ndof = 3 * mesh.num_vertices
        mats.append(scatter_csr(np.array(rows), np.array(cols),
                                np.array(vals), (ndof, ndof)))
    return mats[0], mats[1]


def pressure_load(mesh: Mesh, tags, pressure: float,
                  displacement: np.ndarray | None = None) -> np.ndarray:
    """Nodal force of a uniform pressure on tagged facets: -p * n * area/3.

    With a displacement, area and normal follow the deformed surface
    (follower load); orientation is inherited from the reference normal.
    """
    sel = np.isin(mesh.facet_tags, tags)
    _, ref_normals = mesh.facet_areas_normals()
    verts = mesh.vertices
    if displacement is not None:
        verts = verts + displacement.reshape(-1, 3)
    f = np.zeros(3 * mesh.num_vertices)
    for fidx in np.where(sel)[0]:
        tri = mesh.boundary_facets[fidx]
        p0, p1, p2 = verts[tri]
        an = 0.5 * np.cross(p1 - p0, p2 - p0)
        if an @ ref_normals[fidx] < 0:
            an = -an
        contrib = -pressure * an / 3.0
        for v in tri:
            f[3 * v:3 * v + 3] += contrib
    return f


class SolidModel:
    """Assembles residual and tangent of the wall mechanics problem."""

    def __init__(self, mesh: Mesh, f0, s0, n0, c_buf=1.0,
                 guccione: GuccioneParams | None = None,
                 neo: NeoHookeanParams | None = None,
                 rho: float = 1000.0,
                 dirichlet=(), robin: RobinSupport | None = None):
        self.mesh = mesh
        self.space = FunctionSpace(mesh, degree=1, ncomp=3)
        self.f0, self.s0, self.n0 = f0, s0, n0
        self.c_buf = c_buf
        self.guccione = guccione or GuccioneParams()
        self.neo = neo or NeoHookeanParams()
        self.rho = rho
        self.grads = mesh.barycentric_gradients()
        self.vols = mesh.cell_volumes()
        self.ndof = 3 * mesh.num_vertices
        M_scalar = assemble_mass(FunctionSpace(mesh, degree=1))
        self.mass = sp.kron(M_scalar, sp.eye(3)).tocsr()
        self.robin = robin
        if robin is not None:
            self.robin_k, self.robin_c = robin_matrices(mesh, robin)
        else:
            self.robin_k = self.robin_c = sp.csr_matrix((self.ndof, self.ndof))
        self.dirichlet_dofs, self.dirichlet_vals = self._dirichlet(dirichlet)

    def _dirichlet(self, spec):
        scalar = FunctionSpace(self.mesh, degree=1)
        dofs, vals = [], []
        for tags, comps, value in spec:
            nodes = scalar.nodes_on_facet_tags(tags)
            for c in comps:
                dofs.append(3 * nodes + c)
                vals.append(np.full(nodes.size, float(value)))
        if not dofs:
            return np.array([], dtype=np.int64), np.array([])
        dofs = np.concatenate(dofs)
        vals = np.concatenate(vals)
        dofs, keep = np.unique(dofs, return_index=True)
        return dofs, vals[keep]

    def deformation_gradient(self, d: np.ndarray) -> np.ndarray:
        dn = d.reshape(-1, 3)[self.mesh.tets]          # (nt, 4, 3)
        F = np.einsum("tai,tak->tik", dn, self.grads)  # grad d (per cell)
        return F + np.eye(3)[None]

    def pk1(self, F, active_tension=None):
        P = blended_pk1(F, self.f0, self.s0, self.n0, self.c_buf,
                        self.guccione, self.neo)
        if active_tension is not None:
            Ff = np.einsum("tij,tj->ti", F, self.f0.astype(F.dtype))
            i4f = np.einsum("ti,ti->t", Ff, Ff)
            # keep the dtype of F so complex-step tangents stay exact
            scale = np.asarray(active_tension) / np.sqrt(i4f)
            P = P + scale[:, None, None] * np.einsum("ti,tj->tij", Ff, self.f0)
        return P

    def internal_forces(self, d, active_tension=None):
        F = self.deformation_gradient(d)
        P = self.pk1(F, active_tension)
        elem = np.einsum("tik,tak,t->tai", P, self.grads, self.vols)
        f = np.zeros(self.ndof)
        dofs = (3 * self.mesh.tets[:, :, None] + np.arange(3)[None, None, :])
        np.add.at(f, dofs.ravel(), elem.ravel())
        return f

    def tangent(self, d, active_tension=None):
        F = self.deformation_gradient(d)
        A = complex_step_tangent(lambda Fc: self.pk1(Fc, active_tension), F)
        elem = np.einsum("tikjl,tak,tbl,t->taibj", A, self.grads, self.grads,
                         self.vols)
        dofs = (3 * self.mesh.tets[:, :, None] + np.arange(3)[None, None, :])
        rows = np.broadcast_to(dofs.reshape(-1, 4, 3, 1, 1),
                               elem.shape).ravel()
        cols = np.broadcast_to(dofs.reshape(-1, 1, 1, 4, 3),
                               elem.shape).ravel()
        return scatter_csr(rows, cols, elem.ravel(), (self.ndof, self.ndof))

    def solve_static(self, f_ext=None, active_tension=None, d0=None,
                     n_load_steps: int = 1, tol: float = 1e-8,
                     max_newton: int = 30, follower=None):
        """Incremental Newton solve of quasi-static equilibrium.

        follower: optional (tags, pressure) pair re-evaluated on the
        deformed surface each iteration (used by the pressure-ramp
        initialization).
        """
        d = np.zeros(self.ndof) if d0 is None else d0.copy()
        for step in range(1, n_load_steps + 1):
            frac = step / n_load_steps
            for it in range(max_newton):
                f = np.zeros(self.ndof) if f_ext is None else frac * f_ext
                if follower is not None:
                    tags, p = follower
                    f = f + pressure_load(self.mesh, tags, frac * p, d)
                act = None if active_tension is None else frac * active_tension
                r = self.internal_forces(d, act) + self.robin_k @ d - f
                K = self.tangent(d, act) + self.robin_k
                sys = SparseSystem(K, -r, self.dirichlet_dofs,
                                   self.dirichlet_vals - d[self.dirichlet_dofs],
                                   symmetric=False).constrained()
                du = splu(sys.A.tocsc()).solve(sys.b)
                d = d + du
                if np.linalg.norm(du) <= tol * max(1.0, np.linalg.norm(d)):
                    break
            else:
                raise SolverError("static Newton did not converge "
                                  f"(load step {step})")
        return d

    def dynamic_residual_tangent(self, d_new, d, d_old, dt, f_ext=None,
                                 active_tension=None):
        """Central-difference elastodynamics residual and tangent at d_new."""
        inertia = self.rho * (self.mass @ (d_new - 2.0 * d + d_old)) / dt**2
        r = inertia + self.internal_forces(d_new, active_tension)
        r += self.robin_k @ d_new + self.robin_c @ ((d_new - d) / dt)
        if f_ext is not None:
            r -= f_ext
        K = (self.tangent(d_new, active_tension)
             + self.rho / dt**2 * self.mass
             + self.robin_k + self.robin_c / dt)
        return r, K

    def step_dynamic(self, d, d_old, dt, f_ext=None, active_tension=None,
                     tol: float = 1e-8, max_newton: int = 30):
        d_new = 2.0 * d - d_old   # explicit predictor
        for _ in range(max_newton):
            r, K = self.dynamic_residual_tangent(d_new, d, d_old, dt, f_ext,
                                                 active_tension)
            sys = SparseSystem(K, -r, self.dirichlet_dofs,
                               self.dirichlet_vals - d_new[self.dirichlet_dofs],
                               symmetric=False).constrained()
            du = splu(sys.A.tocsc()).solve(sys.b)
            d_new = d_new + du
            if np.linalg.norm(du) <= tol * max(1.0, np.linalg.norm(d_new)):
                return d_new
        raise SolverError("dynamic Newton did not converge")
