"""Stabilized incompressible Navier-Stokes on a moving domain.

Equal-order P1-P1 velocity/pressure with residual-based SUPG/PSPG plus
grad-div stabilization, convective term in ALE form linearized about the
previous velocity (one linear solve per step), resistive immersed surfaces
(RIIS) for the valves, pressure Neumann boundaries with inertial backflow
stabilization, and spherical control-volume pressure probes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem.linalg import SolverError
from .fem.mesh import Mesh
from .fem.quadrature import tet_rule
from .fem.spaces import FunctionSpace

# local triangle mass matrix times 12/area
_TRI_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


@dataclass
class FluidParams:
    rho: float = 1060.0          # kg/m^3
    mu: float = 3.5e-3           # Pa s
    beta_backflow: float = 1.0   # inertial backflow stabilization factor
    tau_scale: float = 1.0       # SUPG/PSPG scaling
    grad_div_scale: float = 1.0  # grad-div scaling
    # "laplacian": mu grad(u):grad(v); its natural boundary condition
    # mu du/dn - p n = -p_bc n is the one consistent with prescribing plain
    # pressures on open boundaries (see Heywood/Rannacher/Turek do-nothing).
    # "symmetric": full stress 2 mu eps(u):eps(v).
    viscous_form: str = "laplacian"

    def __post_init__(self):
        if self.rho <= 0 or self.mu <= 0:
            raise ValueError("rho and mu must be positive")
        if self.viscous_form not in ("laplacian", "symmetric"):
            raise ValueError("viscous_form must be 'laplacian' or 'symmetric'")


@dataclass
class ControlVolume:
    center: tuple
    radius: float
    chamber: str = ""


@dataclass
class FluidState:
    """Nodal velocity (n, 3) and pressure (n,) on the current configuration."""

    u: np.ndarray
    p: np.ndarray

    @classmethod
    def zeros(cls, mesh: Mesh) -> "FluidState":
        n = mesh.num_vertices
        return cls(np.zeros((n, 3)), np.zeros(n))


def control_volume_pressure(mesh: Mesh, p: np.ndarray, cv: ControlVolume,
                            degree: int = 2) -> float:
    """Volume-average pressure over the part of the mesh inside the sphere."""
    bary, w = tet_rule(degree)
    space = FunctionSpace(mesh, degree=1)
    xq = space.quad_coords(bary)                        # (nt, nq, 3)
    pq = np.einsum("qk,tk->tq", bary, p[mesh.tets])     # (nt, nq)
    inside = np.linalg.norm(xq - np.asarray(cv.center), axis=2) <= cv.radius
    wv = w[None, :] * mesh.cell_volumes()[:, None]
    total = np.sum(wv * inside)
    if total <= 0.0:
        raise ValueError("control volume contains no quadrature points")
    return float(np.sum(wv * inside * pq) / total)


def boundary_flux(mesh: Mesh, u: np.ndarray, tags) -> float:
    """Integral of u . n (outward) over boundary facets with the given tags."""
    mask = np.isin(mesh.facet_tags, np.atleast_1d(tags))
    tris = mesh.boundary_facets[mask]
    areas, normals = mesh.facet_areas_normals()
    an = areas[mask, None] * normals[mask]
    u_mean = u[tris].mean(axis=1)
    return float(np.einsum("fi,fi->", an, u_mean))


class FluidSolver:
    """One owner of a fluid state; assembles and steps the monolithic system.

    dirichlet: sequence of (tags, value) with value a 3-vector, scalar 0, or
    callable(coords) -> (n, 3); applied to all velocity components.
    neumann_tags: boundary tags carrying a pressure load -p n plus backflow
    stabilization; pressures are supplied per step.
    """

    def __init__(self, mesh: Mesh, params: FluidParams | None = None,
                 dirichlet=(), neumann_tags=(), riis_degree: int = 4):
        self.params = params or FluidParams()
        self.dirichlet = list(dirichlet)
        self.neumann_tags = tuple(neumann_tags)
        self.riis_degree = riis_degree
        self.update_mesh(mesh)

    # -- geometry --------------------------------------------------------
    def update_mesh(self, mesh: Mesh):
        """(Re)build geometry-dependent data on the current configuration."""
        self.mesh = mesh
        self.space = FunctionSpace(mesh, degree=1, ncomp=3)
        self.nv = mesh.num_vertices
        self.vols = mesh.cell_volumes()
        self.grads = mesh.barycentric_gradients()       # (nt, 4, 3)
        self.h = mesh.cell_diameters()
        self.bbox = (mesh.vertices.min(axis=0), mesh.vertices.max(axis=0))
        bary, w = tet_rule(self.riis_degree)
        self._riis_bary, self._riis_w = bary, w
        self._riis_xq = np.einsum(
            "qk,tkx->tqx", bary, mesh.vertices[mesh.tets])
        dnodes, dvals = [], []
        for tags, value in self.dirichlet:
            nodes = self.space.nodes_on_facet_tags(tags)
            if callable(value):
                vals = np.asarray(value(mesh.vertices[nodes]), dtype=float)
                vals = np.broadcast_to(vals, (len(nodes), 3))
            else:
                vals = np.broadcast_to(
                    np.asarray(value, dtype=float), (len(nodes), 3))
            dnodes.append(nodes)
            dvals.append(vals)
        if dnodes:
            nodes = np.concatenate(dnodes)
            vals = np.concatenate(dvals)
            nodes, idx = np.unique(nodes, return_index=True)
            self.dir_dofs = self.space.vector_dofs(nodes)
            self.dir_vals = vals[idx].ravel()
        else:
            self.dir_dofs = np.empty(0, dtype=np.int64)
            self.dir_vals = np.empty(0)
        areas, normals = mesh.facet_areas_normals()
        self._neumann_facets = {}
        for tag in self.neumann_tags:
            mask = mesh.facet_tags == tag
            self._neumann_facets[tag] = (
                mesh.boundary_facets[mask], areas[mask], normals[mask])

    # -- element scatter helpers ------------------------------------------
    def _scatter_uu(self, elem):
        """elem (nt, 4, 4, 3, 3) -> COO triplets in velocity dof numbering."""
        t = self.mesh.tets
        rows = (3 * t[:, :, None, None, None]
                + np.arange(3)[None, None, None, :, None])
        cols = (3 * t[:, None, :, None, None]
                + np.arange(3)[None, None, None, None, :])
        rows = np.broadcast_to(rows, elem.shape)
        cols = np.broadcast_to(cols, elem.shape)
        return rows.ravel(), cols.ravel(), elem.ravel()

    def _scatter_up(self, elem):
        """elem (nt, 4, 3, 4): velocity rows (a, i), pressure cols b."""
        t = self.mesh.tets
        rows = 3 * t[:, :, None, None] + np.arange(3)[None, None, :, None]
        cols = np.broadcast_to(t[:, None, None, :], elem.shape)
        rows = np.broadcast_to(rows, elem.shape)
        return rows.ravel(), cols.ravel(), elem.ravel()

    def _scatter_pu(self, elem):
        """elem (nt, 4, 4, 3): pressure rows a, velocity cols (b, j)."""
        t = self.mesh.tets
        rows = np.broadcast_to(t[:, :, None, None], elem.shape)
        cols = 3 * t[:, None, :, None] + np.arange(3)[None, None, None, :]
        cols = np.broadcast_to(cols, elem.shape)
        return rows.ravel(), cols.ravel(), elem.ravel()

    def _scatter_pp(self, elem):
        t = self.mesh.tets
        rows = np.broadcast_to(t[:, :, None], elem.shape)
        cols = np.broadcast_to(t[:, None, :], elem.shape)
        return rows.ravel(), cols.ravel(), elem.ravel()

    # -- valve machinery ---------------------------------------------------
    def riis_weights(self, valves) -> np.ndarray:
        """Sum_k (R_k/eps_k) delta_eps(phi_k) at the RIIS quadrature points,
        shape (nt, nq). Zero where every valve is farther than its band."""
        nt, nq = self._riis_xq.shape[:2]
        w = np.zeros(nt * nq)
        pts = self._riis_xq.reshape(-1, 3)
        lo, hi = self.bbox
        for valve in valves:
            verts = valve.sdf.v
            if not valve.allow_outside and (
                    np.any(verts < lo - 1e-12) or np.any(verts > hi + 1e-12)):
                warnings.warn(
                    f"valve '{valve.name}' extends outside the fluid "
                    "domain bounding box", stacklevel=2)
            w += valve.penalty_weight(pts)
        return w.reshape(nt, nq)

    # -- the step ----------------------------------------------------------
    def step(self, state: FluidState, dt: float, u_ale=None, valves=(),
             pressures=None) -> FluidState:
        """One implicit step. pressures: {neumann_tag: pressure [Pa]}."""
        A, rhs = self.assemble(state, dt, u_ale=u_ale, valves=valves,
                               pressures=pressures)
        A, rhs = apply_dirichlet(A, rhs, self.dir_dofs, self.dir_vals)
        try:
            sol = spla.splu(A.tocsc()).solve(rhs)
        except RuntimeError as exc:  # pragma: no cover - solver failure path
            raise SolverError(f"fluid linear solve failed: {exc}") from exc
        if not np.all(np.isfinite(sol)):
            raise SolverError("fluid solve produced non-finite values")
        nv = self.nv
        return FluidState(sol[:3 * nv].reshape(nv, 3), sol[3 * nv:])

    def assemble(self, state: FluidState, dt: float, u_ale=None, valves=(),
                 pressures=None):
        """Monolithic matrix and rhs over [u dofs; p dofs], no Dirichlet.

        The system is linear: convection, stabilization, backflow and RIIS
        coefficients are frozen at the previous velocity."""
        prm = self.params
        rho, mu = prm.rho, prm.mu
        nv, nt = self.nv, self.mesh.num_cells
        g, V, h = self.grads, self.vols, self.h
        tets = self.mesh.tets
        pressures = dict(pressures or {})

        u_n = np.asarray(state.u, dtype=float)
        if u_ale is None:
            u_ale = np.zeros_like(u_n)
        w_cell = (u_n[tets].mean(axis=1) - u_ale[tets].mean(axis=1))  # (nt,3)
        wnorm = np.linalg.norm(w_cell, axis=1)
        nu = mu / rho

        # RIIS quadrature weights first: the penalty is a reaction term and
        # must enter the stabilization parameter, otherwise PSPG acts as an
        # artificial permeability across the immersed surfaces.
        wq = None
        if valves:
            wq = self.riis_weights(valves)                # (nt, nq)
            if not np.any(wq):
                wq = None
        react = np.zeros(nt)
        if wq is not None:
            react = np.einsum("q,tq->t", self._riis_w, wq) / rho
        tau = prm.tau_scale / np.sqrt(
            (2.0 / dt) ** 2 + (2.0 * wnorm / h) ** 2
            + (4.0 * nu / h ** 2) ** 2 + react ** 2)
        tau_c = prm.grad_div_scale * (mu + 0.5 * rho * wnorm * h)

        I3 = np.eye(3)
        wg = np.einsum("ti,tai->ta", w_cell, g)          # w . grad(phi_a)
        gg = np.einsum("tax,tbx->tab", g, g)

        # velocity-velocity block -------------------------------------------
        mass = (V / 20.0)[:, None, None] * (1.0 + np.eye(4))
        conv = (V / 4.0)[:, None, None] * wg[:, None, :]          # rows a
        supg_conv = (tau * V)[:, None, None] * wg[:, :, None] * wg[:, None, :]
        supg_time = (tau * V / (4.0 * dt))[:, None, None] * wg[:, :, None] \
            * np.ones((1, 1, 4))
        scalar_uu = (rho / dt) * mass + rho * (conv + supg_conv + supg_time)
        elem_uu = scalar_uu[:, :, :, None, None] * I3
        # viscous term and grad-div
        elem_uu = elem_uu + mu * V[:, None, None, None, None] \
            * gg[:, :, :, None, None] * I3
        if prm.viscous_form == "symmetric":
            elem_uu = elem_uu + mu * V[:, None, None, None, None] \
                * np.einsum("tbi,taj->tabij", g, g)
        elem_uu = elem_uu + (tau_c * V)[:, None, None, None, None] \
            * np.einsum("tai,tbj->tabij", g, g)

        # RIIS penalty ------------------------------------------------------
        riis_mat = None
        if wq is not None:
            N = self.space.basis_values(self._riis_bary)  # (nq, 4)
            r_elem = np.einsum("q,tq,qa,qb->tab", self._riis_w, wq, N, N) \
                * V[:, None, None]
            rows, cols, vals = self._scatter_uu(
                r_elem[:, :, :, None, None] * I3)
            riis_mat = sp.coo_matrix(
                (vals, (rows, cols)), shape=(3 * nv, 3 * nv)).tocsr()

        # velocity-pressure couplings ---------------------------------------
        elem_up = (-(V / 4.0)[:, None, None, None] * g[:, :, :, None]
                   + (tau * V)[:, None, None, None] * wg[:, :, None, None]
                   * np.transpose(g, (0, 2, 1))[:, None, :, :])
        # continuity: int q (div u); PSPG time and convection terms
        elem_pu = (V / 4.0)[:, None, None, None] * np.ones((1, 4, 1, 1)) \
            * g[:, None, :, :]
        elem_pu = elem_pu + (tau * V / (4.0 * dt))[:, None, None, None] \
            * g[:, :, None, :] * np.ones((1, 1, 4, 1))
        elem_pu = elem_pu + (tau * V)[:, None, None, None] \
            * g[:, :, None, :] * wg[:, None, :, None]
        elem_pp = (tau / rho * V)[:, None, None] * gg

        rows_uu, cols_uu, vals_uu = self._scatter_uu(elem_uu)
        rows_up, cols_up, vals_up = self._scatter_up(elem_up)
        rows_pu, cols_pu, vals_pu = self._scatter_pu(elem_pu)
        rows_pp, cols_pp, vals_pp = self._scatter_pp(elem_pp)

        nu_dofs = 3 * nv
        ndof = nu_dofs + nv
        rows = np.concatenate(
            [rows_uu, rows_up, rows_pu + nu_dofs, rows_pp + nu_dofs])
        cols = np.concatenate(
            [cols_uu, cols_up + nu_dofs, cols_pu, cols_pp + nu_dofs])
        vals = np.concatenate([vals_uu, vals_up, vals_pu, vals_pp])
        A = sp.coo_matrix((vals, (rows, cols)), shape=(ndof, ndof)).tocsr()

        # time-derivative operator applied to u^n for the rhs ----------------
        t_elem_uu = ((rho / dt) * mass + rho * supg_time)[:, :, :, None, None] * I3
        t_elem_pu = (tau * V / (4.0 * dt))[:, None, None, None] \
            * g[:, :, None, :] * np.ones((1, 1, 4, 1))
        ru, cu, vu = self._scatter_uu(t_elem_uu)
        rp, cp, vp = self._scatter_pu(t_elem_pu)
        T = sp.coo_matrix(
            (np.concatenate([vu, vp]),
             (np.concatenate([ru, rp + nu_dofs]), np.concatenate([cu, cp]))),
            shape=(ndof, nu_dofs)).tocsr()
        rhs = T @ u_n.ravel()

        if riis_mat is not None:
            A = A + sp.bmat(
                [[riis_mat, None], [None, sp.csr_matrix((nv, nv))]],
                format="csr")
            rhs[:nu_dofs] += riis_mat @ u_ale.ravel()

        # Neumann pressure loads and backflow stabilization ------------------
        for tag, (tris, areas, n_hat) in self._neumann_facets.items():
            if len(tris) == 0:
                continue
            an = areas[:, None] * n_hat                   # area * outward n
            p_bc = float(pressures.get(tag, 0.0))
            if p_bc != 0.0:
                load = (-p_bc / 3.0) * an                 # per facet vertex
                fdofs = 3 * tris[:, :, None] + np.arange(3)[None, None, :]
                np.add.at(rhs, fdofs.ravel(),
                          np.broadcast_to(load[:, None, :],
                                          fdofs.shape).ravel())
            # backflow: beta (rho/2) |u^n . n|_- (u . v) on inflow facets
            un_facet = np.einsum(
                "fi,fi->f", u_n[tris].mean(axis=1), n_hat)
            coef = prm.beta_backflow * 0.5 * rho * np.maximum(-un_facet, 0.0)
            active = coef > 0.0
            if np.any(active):
                elem = (coef[active] * areas[active])[:, None, None] \
                    * _TRI_MASS
                ta = tris[active]
                br = (3 * ta[:, :, None, None, None]
                      + np.arange(3)[None, None, None, :, None])
                bc = (3 * ta[:, None, :, None, None]
                      + np.arange(3)[None, None, None, None, :])
                bv = elem[:, :, :, None, None] * I3
                br = np.broadcast_to(br, bv.shape)
                bc = np.broadcast_to(bc, bv.shape)
                A = A + sp.coo_matrix(
                    (bv.ravel(), (br.ravel(), bc.ravel())),
                    shape=(ndof, ndof)).tocsr()

        return A, rhs


def apply_dirichlet(A: sp.csr_matrix, rhs: np.ndarray, dofs, vals):
    """Row/column elimination of Dirichlet constraints on a square system."""
    if len(dofs) == 0:
        return A, rhs
    ndof = A.shape[0]
    full = np.zeros(ndof)
    full[dofs] = vals
    rhs = rhs - A @ full
    keep = np.ones(ndof)
    keep[dofs] = 0.0
    D = sp.diags(keep)
    pin = np.zeros(ndof)
    pin[dofs] = 1.0
    A = (D @ A @ D + sp.diags(pin)).tocsr()
    rhs = keep * rhs
    rhs[dofs] = vals
    return A, rhs
