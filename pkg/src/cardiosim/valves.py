"""Immersed valve surfaces with a resistive penalty.

Valves are triangulated surfaces immersed in the fluid mesh. A smoothed
Dirac delta of the signed distance spreads a resistive penalty over a band
of half-thickness eps, forcing the fluid velocity toward the surface
velocity (zero, in the quasi-static approximation). Opening and closing
follow a prescribed coefficient c(t) in [0, 1] that displaces the surface
from its closed position along a per-vertex opening field; the switching
times come from pressure jumps across the valve, with latching so a
transition runs to completion before the next one can start.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


def smoothed_delta(y, eps: float):
    """Raised-cosine delta: (1/2eps)(1 + cos(pi y/eps)) on |y| <= eps.

    Integrates to one and is C1 at the band edges.
    """
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    inside = np.abs(y) <= eps
    out[inside] = (1.0 + np.cos(np.pi * y[inside] / eps)) / (2.0 * eps)
    return out


def opening_coefficient(t: float, t_open: float, dt_open: float,
                        t_close: float, dt_close: float,
                        chi: float = -3.0) -> float:
    """Valve opening fraction: 0 closed, 1 open.

    The ramp is a raised cosine of an exponential time warp with rate chi;
    t_open/t_close may be +-inf for a valve that never switches.
    """
    def ramp(s, dt):
        num = 1.0 - np.exp(-chi * s / dt)
        return 0.5 * (1.0 - np.cos(np.pi * num / (1.0 - np.exp(-chi))))

    if t_open == np.inf or t <= t_open:
        return 0.0
    if t <= t_open + dt_open:
        return float(ramp(t - t_open, dt_open))
    if not np.isfinite(t_close) or t < t_close:
        return 1.0
    if t <= t_close + dt_close:
        return float(1.0 - ramp(t - t_close, dt_close))
    return 0.0


def _triangle_closest_points(p, a, b, c):
    """Closest point on triangle (a,b,c) for each p; returns points and the
    barycentric coordinates used for feature classification."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ti,ti->t", ab, ap)
    d2 = np.einsum("ti,ti->t", ac, ap)
    bp = p - b
    d3 = np.einsum("ti,ti->t", ab, bp)
    d4 = np.einsum("ti,ti->t", ac, bp)
    cp = p - c
    d5 = np.einsum("ti,ti->t", ab, cp)
    d6 = np.einsum("ti,ti->t", ac, cp)

    n = len(p)
    bary = np.zeros((n, 3))
    done = np.zeros(n, dtype=bool)

    def settle(mask, u, v, w):
        m = mask & ~done
        bary[m] = np.column_stack([u[m] if np.ndim(u) else np.full(m.sum(), u),
                                   v[m] if np.ndim(v) else np.full(m.sum(), v),
                                   w[m] if np.ndim(w) else np.full(m.sum(), w)])
        done[m] = True

    settle((d1 <= 0) & (d2 <= 0), 1.0, np.zeros(n), np.zeros(n))   # vertex a
    settle((d3 >= 0) & (d4 <= d3), np.zeros(n), 1.0, np.zeros(n))  # vertex b
    settle((d6 >= 0) & (d5 <= d6), np.zeros(n), np.zeros(n), 1.0)  # vertex c

    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
    settle((vc <= 0) & (d1 >= 0) & (d3 <= 0), 1.0 - v_ab, v_ab, np.zeros(n))

    vb = d5 * d2 - d1 * d6
    with np.errstate(divide="ignore", invalid="ignore"):
        w_ac = d2 / (d2 - d6)
    settle((vb <= 0) & (d2 >= 0) & (d6 <= 0), 1.0 - w_ac, np.zeros(n), w_ac)

    va = d3 * d6 - d5 * d4
    with np.errstate(divide="ignore", invalid="ignore"):
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    settle((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
           np.zeros(n), 1.0 - w_bc, w_bc)

    denom = va + vb + vc
    v_in = vb / denom
    w_in = vc / denom
    settle(np.ones(n, dtype=bool), 1.0 - v_in - w_in, v_in, w_in)

    pts = (bary[:, 0:1] * a + bary[:, 1:2] * b + bary[:, 2:3] * c)
    return pts, bary


class SignedDistanceField:
    """Signed distance to a triangulated surface.

    The sign uses angle-weighted pseudo-normals so that points near edges
    and vertices are classified consistently. Queries outside the narrow
    band are clamped to +-band without refining the nearest feature.
    """

    def __init__(self, vertices: np.ndarray, triangles: np.ndarray,
                 band: float = np.inf):
        self.update_vertices(vertices, triangles)
        self.band = band

    def update_vertices(self, vertices, triangles=None):
        self.v = np.asarray(vertices, dtype=float)
        if triangles is not None:
            self.t = np.asarray(triangles, dtype=np.int64)
        a, b, c = self.v[self.t[:, 0]], self.v[self.t[:, 1]], self.v[self.t[:, 2]]
        fn = np.cross(b - a, c - a)
        norms = np.linalg.norm(fn, axis=1)
        self.face_normal = fn / norms[:, None]
        self.centroids = (a + b + c) / 3.0
        self._max_centroid_radius = float(np.max(np.linalg.norm(
            np.stack([a, b, c], axis=1) - self.centroids[:, None, :],
            axis=2)))
        self._tree = cKDTree(self.centroids)
        self._build_pseudo_normals()

    def _build_pseudo_normals(self):
        nv = len(self.v)
        vert_n = np.zeros((nv, 3))
        edge_n = {}
        for f, tri in enumerate(self.t):
            pts = self.v[tri]
            for k in range(3):
                i = tri[k]
                e1 = pts[(k + 1) % 3] - pts[k]
                e2 = pts[(k + 2) % 3] - pts[k]
                cosang = np.clip(e1 @ e2 / (np.linalg.norm(e1) * np.linalg.norm(e2)),
                                 -1.0, 1.0)
                vert_n[i] += np.arccos(cosang) * self.face_normal[f]
                key = tuple(sorted((tri[k], tri[(k + 1) % 3])))
                edge_n[key] = edge_n.get(key, 0.0) + self.face_normal[f]
        lens = np.linalg.norm(vert_n, axis=1)
        lens[lens == 0] = 1.0
        self.vertex_normal = vert_n / lens[:, None]
        self.edge_normal = {}
        for k, v in edge_n.items():
            nrm = np.linalg.norm(v)
            self.edge_normal[k] = v / nrm if nrm > 1e-12 else v

    def _feature_normal(self, tri, bary):
        zero = bary < 1e-9
        nz = int(3 - zero.sum())
        if nz == 3:
            pass  # interior: face normal
        elif nz == 2:
            idx = [i for i in range(3) if not zero[i]]
            key = tuple(sorted((tri[idx[0]], tri[idx[1]])))
            return self.edge_normal[key]
        else:
            return self.vertex_normal[tri[int(np.argmax(bary))]]
        return None

    def query(self, points: np.ndarray, k_candidates: int = 12) -> np.ndarray:
        """Signed distance per point, clamped to +-band outside it."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(p)
        k = min(k_candidates, len(self.t))
        _, cand = self._tree.query(p, k=k)
        cand = cand.reshape(n, k)
        best_d2 = np.full(n, np.inf)
        best_pt = np.zeros((n, 3))
        best_tri = np.zeros(n, dtype=np.int64)
        best_bary = np.zeros((n, 3))
        for j in range(k):
            tri = self.t[cand[:, j]]
            pts, bary = _triangle_closest_points(
                p, self.v[tri[:, 0]], self.v[tri[:, 1]], self.v[tri[:, 2]])
            d2 = np.einsum("ti,ti->t", p - pts, p - pts)
            better = d2 < best_d2
            best_d2[better] = d2[better]
            best_pt[better] = pts[better]
            best_tri[better] = cand[better, j]
            best_bary[better] = bary[better]
        dist = np.sqrt(best_d2)
        sign = np.ones(n)
        for i in range(n):
            fidx = best_tri[i]
            nrm = self._feature_normal(self.t[fidx], best_bary[i])
            if nrm is None:
                nrm = self.face_normal[fidx]
            if (p[i] - best_pt[i]) @ nrm < 0:
                sign[i] = -1.0
        return sign * np.minimum(dist, self.band)

    def unsigned_distance(self, points: np.ndarray,
                          k_candidates: int = 12) -> np.ndarray:
        """Unsigned distance, clamped to band, with a nearest-centroid
        prefilter so points far from the surface are cheap. Sufficient for
        even functions of the signed distance (the RIIS delta)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(p)
        out = np.full(n, self.band)
        # centroid distance underestimates the true distance by at most the
        # largest centroid-to-vertex offset, so this mask is conservative
        d_nn, _ = self._tree.query(p, k=1)
        margin = self._max_centroid_radius
        near = d_nn <= self.band + margin
        if not np.any(near):
            return out
        pn = p[near]
        k = min(k_candidates, len(self.t))
        _, cand = self._tree.query(pn, k=k)
        cand = cand.reshape(len(pn), k)
        best_d2 = np.full(len(pn), np.inf)
        for j in range(k):
            tri = self.t[cand[:, j]]
            pts, _ = _triangle_closest_points(
                pn, self.v[tri[:, 0]], self.v[tri[:, 1]], self.v[tri[:, 2]])
            best_d2 = np.minimum(
                best_d2, np.einsum("ti,ti->t", pn - pts, pn - pts))
        out[near] = np.minimum(np.sqrt(best_d2), self.band)
        return out


@dataclass
class ValveParams:
    resistance: float = 1.0e5    # kg/(m s)  (R in the penalty R/eps)
    eps: float = 0.75e-3         # band half-thickness [m]
    dt_open: float = 10e-3
    dt_close: float = 30e-3
    chi: float = -3.0


class Valve:
    """One immersed valve: closed surface, opening field and switch logic."""

    def __init__(self, vertices_closed, triangles, opening_displacement,
                 params: ValveParams | None = None, name: str = "valve",
                 allow_outside: bool = False):
        self.x_closed = np.asarray(vertices_closed, dtype=float)
        self.tris = np.asarray(triangles, dtype=np.int64)
        self.d_open = np.asarray(opening_displacement, dtype=float)
        self.p = params or ValveParams()
        self.name = name
        self.allow_outside = bool(allow_outside)
        self.t_open = np.inf
        self.t_close = np.inf
        self.sdf = SignedDistanceField(self.x_closed, self.tris,
                                       band=10 * self.p.eps)

    # -- switching -----------------------------------------------------
    def coefficient(self, t: float) -> float:
        return opening_coefficient(t, self.t_open, self.p.dt_open,
                                   self.t_close, self.p.dt_close, self.p.chi)

    def _transitioning(self, t: float) -> bool:
        in_opening = self.t_open < t < self.t_open + self.p.dt_open
        in_closing = self.t_close < t < self.t_close + self.p.dt_close
        return bool(in_opening or in_closing)

    def update_state(self, t: float, pressure_jump: float):
        """Latch opening/closing on the sign of the upstream-downstream
        pressure difference. No new transition starts while one runs."""
        if self._transitioning(t):
            return
        c = self.coefficient(t)
        if c == 0.0 and pressure_jump > 0.0:
            self.t_open = t
            self.t_close = np.inf
        elif c == 1.0 and pressure_jump < 0.0:
            self.t_close = t

    def force_open(self, t: float = -np.inf):
        self.t_open = t
        self.t_close = np.inf

    # -- geometry ------------------------------------------------------
    def current_vertices(self, t: float, ale_displacement=None) -> np.ndarray:
        x = self.x_closed + self.coefficient(t) * self.d_open
        if ale_displacement is not None:
            x = x + ale_displacement
        return x

    def update_geometry(self, t: float, ale_displacement=None):
        self.sdf.update_vertices(self.current_vertices(t, ale_displacement))

    def penalty_weight(self, points: np.ndarray) -> np.ndarray:
        """(R/eps) delta_eps(distance) at given points. The delta is even,
        so the unsigned distance (with its cheap far-field path) suffices."""
        d = self.sdf.unsigned_distance(points)
        return (self.p.resistance / self.p.eps) * smoothed_delta(d, self.p.eps)


def _axis_frame(normal):
    normal = np.asarray(normal, dtype=float)
    normal = normal / np.linalg.norm(normal)
    seed = np.array([1.0, 0.0, 0.0])
    if abs(seed @ normal) > 0.9:
        seed = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(normal, seed)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    return normal, e1, e2


def disk_valve(center, normal, radius, n_rings: int = 6, n_sectors: int = 16,
               open_mode: str = "slide", params: ValveParams | None = None,
               name: str = "valve", allow_outside: bool = False):
    """Triangulated circular disk valve perpendicular to `normal`.

    open_mode "slide": opening translates the disk rigidly sideways out of
    the lumen, like a gate, so the fully open valve leaves the channel
    clear (a simplification of leaflets folding against the wall);
    "none": the valve never moves.
    """
    from .fem.meshgen import disk_triangulation

    normal, e1, e2 = _axis_frame(normal)
    pts2, tris = disk_triangulation(n_rings, n_sectors)
    verts = (center + radius * (np.outer(pts2[:, 0], e1)
                                + np.outer(pts2[:, 1], e2)))
    if open_mode == "slide":
        d_open = np.tile(2.2 * radius * e1, (len(verts), 1))
    else:
        d_open = np.zeros_like(verts)
    return Valve(verts, tris, d_open, params, name, allow_outside=allow_outside)


def cone_valve(center, normal, r_inner, r_outer, lift_inner, lift_outer,
               open_radial: float = 0.0, open_lift: float = 0.0,
               n_rings: int = 4, n_sectors: int = 24,
               params: ValveParams | None = None, name: str = "valve",
               allow_outside: bool = False):
    """Conical annulus valve around the `normal` axis through `center`.

    The surface spans radii [r_inner, r_outer]; the inner and outer rims
    sit at axial offsets lift_inner and lift_outer along the normal, so a
    shallow cone can hug a funnel-shaped inflow. Opening displaces every
    vertex radially outward by open_radial and axially by open_lift, which
    parks the ring outside the lumen.
    """
    from .fem.meshgen import annulus_triangulation

    if not 0 < r_inner < r_outer:
        raise ValueError("need 0 < r_inner < r_outer")
    normal, e1, e2 = _axis_frame(normal)
    radii = np.linspace(r_inner, r_outer, n_rings + 1)
    pts2, tris = annulus_triangulation(radii, n_sectors)
    r = np.linalg.norm(pts2, axis=1)
    s = (r - r_inner) / (r_outer - r_inner)
    lift = lift_inner + s * (lift_outer - lift_inner)
    radial_dir = (np.outer(pts2[:, 0] / r, e1) + np.outer(pts2[:, 1] / r, e2))
    verts = center + r[:, None] * radial_dir + lift[:, None] * normal
    d_open = open_radial * radial_dir + open_lift * normal
    return Valve(verts, tris, d_open, params, name, allow_outside=allow_outside)
