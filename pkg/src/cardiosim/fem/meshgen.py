"""Structured tetrahedral mesh generators for idealized geometries.

Boxes use the 6-tet Kuhn subdivision of each cube. Tubes, shells and the
idealized ventricle are built by extruding a 2D triangulated cross section
(disk, or disk plus annular wall) along an axis; prisms are split into
three tets with the lowest-global-index diagonal rule, which guarantees
conforming faces between neighboring prisms.
"""

from __future__ import annotations

import numpy as np

from .mesh import Mesh


def _orient_positive(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    x = vertices[tets]
    vol6 = np.linalg.det(
        np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=2)
    )
    flip = vol6 < 0
    tets = tets.copy()
    tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()
    return tets


def boundary_faces(tets: np.ndarray) -> np.ndarray:
    """Faces of the tet mesh that appear exactly once (the boundary)."""
    combos = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]
    faces = np.concatenate([tets[:, c] for c in combos], axis=0)
    key = np.sort(faces, axis=1)
    _, idx, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    return faces[idx[counts == 1]]


def tag_boundary(vertices: np.ndarray, tets: np.ndarray, taggers,
                 default_tag: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Tag boundary faces by centroid predicates.

    taggers: list of (tag, predicate(centroids (n,3)) -> bool array); first
    match wins, unmatched faces get default_tag.
    """
    faces = boundary_faces(tets)
    cent = vertices[faces].mean(axis=1)
    tags = np.full(len(faces), default_tag, dtype=np.int64)
    assigned = np.zeros(len(faces), dtype=bool)
    for tag, pred in taggers:
        hit = ~assigned & np.asarray(pred(cent), dtype=bool)
        tags[hit] = tag
        assigned |= hit
    return faces, tags


def unit_tetrahedron() -> Mesh:
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    t = np.array([[0, 1, 2, 3]])
    faces = boundary_faces(t)
    return Mesh(v, t, boundary_facets=faces, facet_tags=np.ones(len(faces), dtype=np.int64))


def box_mesh(nx: int, ny: int, nz: int, lengths=(1.0, 1.0, 1.0),
             origin=(0.0, 0.0, 0.0)) -> Mesh:
    """Structured box. Facet tags: 1/2 = x min/max, 3/4 = y, 5/6 = z."""
    Lx, Ly, Lz = lengths
    ox, oy, oz = origin
    xs = np.linspace(ox, ox + Lx, nx + 1)
    ys = np.linspace(oy, oy + Ly, ny + 1)
    zs = np.linspace(oz, oz + Lz, nz + 1)
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    I, J, K = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    I, J, K = I.ravel(), J.ravel(), K.ravel()
    c = [vid(I + a, J + b, K + d) for a, b, d in
         [(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0), (0, 0, 1), (1, 0, 1), (0, 1, 1), (1, 1, 1)]]
    # Kuhn: 6 tets per cube along the 000 -> 111 diagonal
    kuhn = [(0, 1, 3, 7), (0, 1, 5, 7), (0, 2, 3, 7), (0, 2, 6, 7), (0, 4, 5, 7), (0, 4, 6, 7)]
    tets = np.concatenate([np.stack([c[a], c[b], c[d], c[e]], axis=1) for a, b, d, e in kuhn])
    tets = _orient_positive(verts, tets)
    eps = 1e-9 * max(Lx, Ly, Lz)
    faces, tags = tag_boundary(verts, tets, [
        (1, lambda p: p[:, 0] < ox + eps),
        (2, lambda p: p[:, 0] > ox + Lx - eps),
        (3, lambda p: p[:, 1] < oy + eps),
        (4, lambda p: p[:, 1] > oy + Ly - eps),
        (5, lambda p: p[:, 2] < oz + eps),
        (6, lambda p: p[:, 2] > oz + Lz - eps),
    ])
    return Mesh(verts, tets, boundary_facets=faces, facet_tags=tags)


# -- 2D cross sections -------------------------------------------------------


def disk_triangulation(n_rings: int, n_sectors: int,
                       radii=None) -> tuple[np.ndarray, np.ndarray]:
    """Triangulated unit disk: center vertex plus n_rings rings of n_sectors."""
    if radii is None:
        radii = np.arange(1, n_rings + 1) / n_rings
    ang = 2 * np.pi * np.arange(n_sectors) / n_sectors
    pts = [np.zeros((1, 2))]
    for r in radii:
        pts.append(np.column_stack([r * np.cos(ang), r * np.sin(ang)]))
    pts = np.concatenate(pts)

    def ring(i, j):  # ring index i >= 1
        return 1 + (i - 1) * n_sectors + (j % n_sectors)

    tris = []
    for j in range(n_sectors):
        tris.append((0, ring(1, j), ring(1, j + 1)))
    for i in range(1, n_rings):
        for j in range(n_sectors):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris.append((a, b, d))
            tris.append((a, d, c))
    return pts, np.array(tris, dtype=np.int64)


def annulus_triangulation(radii: np.ndarray, n_sectors: int,
                          base_points: np.ndarray | None = None):
    """Triangulated annulus over the given ring radii (innermost first).

    If base_points is given, the innermost ring reuses its last n_sectors
    points (to share nodes with an inner disk).
    """
    ang = 2 * np.pi * np.arange(n_sectors) / n_sectors
    new_rings = radii if base_points is None else radii[1:]
    pts = [np.column_stack([r * np.cos(ang), r * np.sin(ang)]) for r in new_rings]
    pts = np.concatenate(pts) if pts else np.zeros((0, 2))
    if base_points is not None:
        offset = len(base_points) - n_sectors

        def ring(i, j):
            if i == 0:
                return offset + (j % n_sectors)
            return len(base_points) + (i - 1) * n_sectors + (j % n_sectors)
    else:
        def ring(i, j):
            return i * n_sectors + (j % n_sectors)

    tris = []
    for i in range(len(radii) - 1):
        for j in range(n_sectors):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris.append((a, b, d))
            tris.append((a, d, c))
    return pts, np.array(tris, dtype=np.int64)


# -- extrusion ----------------------------------------------------------------


def extrude_triangulation(points2d: np.ndarray, tris: np.ndarray,
                          layer_coords, tri_labels=None):
    """Extrude a 2D triangulation through a list of per-layer 3D point sets.

    layer_coords: list of (np, 3) arrays, one per layer (same 2D topology).
    Returns (vertices, tets, tet_labels, layer_of_tet).
    """
    layers = [np.asarray(L, dtype=float) for L in layer_coords]
    npts = len(points2d)
    nlay = len(layers)
    verts = np.concatenate(layers)
    tets, labels, lay_idx = [], [], []
    if tri_labels is None:
        tri_labels = np.zeros(len(tris), dtype=np.int64)
    for k in range(nlay - 1):
        off_b, off_t = k * npts, (k + 1) * npts
        for tri, lab in zip(tris, tri_labels):
            order = np.argsort(tri)
            i, j, m = tri[order]
            bi, bj, bm = off_b + i, off_b + j, off_b + m
            ti, tj, tm = off_t + i, off_t + j, off_t + m
            tets.append((bi, bj, bm, tm))
            tets.append((bi, bj, tj, tm))
            tets.append((bi, ti, tj, tm))
            labels.extend([lab] * 3)
            lay_idx.extend([k] * 3)
    tets = _orient_positive(verts, np.array(tets, dtype=np.int64))
    return verts, tets, np.array(labels, dtype=np.int64), np.array(lay_idx, dtype=np.int64)


def tube_mesh(radius: float, length: float, n_rings: int = 3, n_sectors: int = 12,
              n_layers: int = 10, inlet_tag: int = 1, outlet_tag: int = 2,
              wall_tag: int = 3) -> Mesh:
    """Straight cylinder along z in [0, length]."""
    pts2, tris = disk_triangulation(n_rings, n_sectors)
    zs = np.linspace(0.0, length, n_layers + 1)
    layers = [np.column_stack([radius * pts2, np.full(len(pts2), z)]) for z in zs]
    verts, tets, _, _ = extrude_triangulation(pts2, tris, layers)
    eps = 1e-9 * max(radius, length)
    faces, tags = tag_boundary(verts, tets, [
        (inlet_tag, lambda p: p[:, 2] < eps),
        (outlet_tag, lambda p: p[:, 2] > length - eps),
    ], default_tag=wall_tag)
    return Mesh(verts, tets, boundary_facets=faces, facet_tags=tags)


def tube_with_wall(radius: float, thickness: float, length: float,
                   n_rings: int = 3, n_wall: int = 2, n_sectors: int = 12,
                   n_layers: int = 10):
    """Conforming fluid cylinder + solid annular wall.

    Returns (fluid_mesh, solid_mesh, interface_map) where interface_map is
    a (n_int, 2) array of (fluid_vertex, solid_vertex) pairs on the shared
    wall surface. Fluid facet tags: 1 inlet, 2 outlet, 3 interface wall.
    Solid facet tags: 1 inlet ring, 2 outlet ring, 3 inner (interface),
    4 outer.
    """
    pts_f, tris_f = disk_triangulation(n_rings, n_sectors)
    wall_radii = radius + thickness * np.arange(n_wall + 1) / n_wall
    pts_s, tris_s = annulus_triangulation(wall_radii / radius, n_sectors,
                                          base_points=pts_f)
    pts2 = np.concatenate([pts_f, pts_s])
    tris = np.concatenate([tris_f, tris_s])
    labels2 = np.concatenate([np.zeros(len(tris_f), np.int64), np.ones(len(tris_s), np.int64)])
    zs = np.linspace(0.0, length, n_layers + 1)
    layers = [np.column_stack([radius * pts2, np.full(len(pts2), z)]) for z in zs]
    verts, tets, labels, _ = extrude_triangulation(pts2, tris, layers, labels2)
    mesh = Mesh(verts, tets, cell_tags=labels)
    fluid, fmap = extract_submesh(mesh, labels == 0)
    solid, smap = extract_submesh(mesh, labels == 1)
    interface = _match_parent_vertices(fmap, smap)
    rad = np.linalg.norm
    eps = 1e-9 * max(radius, length)
    _tag_tube_like(fluid, length, radius, eps, solid=False)
    _tag_tube_like(solid, length, radius, eps, solid=True, outer=radius + thickness)
    return fluid, solid, interface


def ventricle_with_outflow(r_base: float = 0.03, z_base: float = 0.06,
                           thickness: float = 0.009, r_tube: float = 0.011,
                           l_tube: float = 0.024, dz_shoulder: float = 0.004,
                           r_apex_frac: float = 0.25,
                           n_rings: int = 4, n_wall: int = 2,
                           n_sectors: int = 16, n_layers_lv: int = 10,
                           n_layers_shoulder: int = 3, n_layers_tube: int = 4):
    """Idealized left ventricle with a short outflow tract.

    The fluid domain is a truncated half-ellipsoid cavity (apex down,
    short radius r_base, long semi-axis z_base) joined at the base plane
    to a cylindrical outflow tube of radius r_tube through a short conical
    shoulder. The shoulder annulus is the venous inflow boundary; the
    tube wall is rigid. A conforming myocardial shell of constant
    thickness wraps the cavity up to the base plane.

    Fluid facet tags: 1 inflow shoulder, 2 outflow, 3 endocardium
    (interface), 4 apex cap (rigid), 5 tube wall (rigid).
    Solid facet tags: 1 base rim, 2 apex rim, 3 endocardium (interface),
    4 epicardium.

    Returns (fluid_mesh, solid_mesh, interface_map, geo) where geo holds
    the defining dimensions and the cavity radius profile.
    """
    if not 0 < r_apex_frac < 1:
        raise ValueError("r_apex_frac must lie in (0, 1)")
    if r_tube >= r_base:
        raise ValueError("outflow radius must be smaller than the base radius")

    def profile(z):
        """Cavity radius of the half ellipsoid at height z (apex at 0)."""
        s = np.clip((z_base - np.asarray(z, dtype=float)) / z_base, -1.0, 1.0)
        return r_base * np.sqrt(np.maximum(1.0 - s**2, 0.0))

    z_apex = z_base * (1.0 - np.sqrt(1.0 - r_apex_frac**2))
    z_lv = np.linspace(z_apex, z_base, n_layers_lv + 1)
    z_top = z_base + dz_shoulder + l_tube
    s_sh = np.arange(1, n_layers_shoulder + 1) / n_layers_shoulder
    z_sh = z_base + dz_shoulder * s_sh
    r_sh = r_base + (r_tube - r_base) * s_sh
    z_tube = (z_base + dz_shoulder
              + l_tube * np.arange(1, n_layers_tube + 1) / n_layers_tube)
    z_all = np.concatenate([z_lv, z_sh, z_tube])
    r_all = np.concatenate([profile(z_lv), r_sh,
                            np.full(n_layers_tube, r_tube)])

    pts_f, tris_f = disk_triangulation(n_rings, n_sectors)
    wall_radii = 1.0 + thickness * np.arange(n_wall + 1) / (n_wall * r_base)
    pts_s, tris_s = annulus_triangulation(wall_radii, n_sectors, base_points=pts_f)
    pts2 = np.concatenate([pts_f, pts_s])
    tris = np.concatenate([tris_f, tris_s])
    labels2 = np.concatenate([np.zeros(len(tris_f), np.int64),
                              np.ones(len(tris_s), np.int64)])
    rho = np.linalg.norm(pts2, axis=1)
    direction = np.divide(pts2, rho[:, None], out=np.zeros_like(pts2),
                          where=rho[:, None] > 0)
    layers = []
    for z, r in zip(z_all, r_all):
        rad = np.where(rho <= 1.0 + 1e-12, r * rho, r + (rho - 1.0) * r_base)
        layers.append(np.column_stack([rad * direction[:, 0],
                                       rad * direction[:, 1],
                                       np.full(len(pts2), z)]))
    verts, tets, labels, lay = extrude_triangulation(pts2, tris, layers, labels2)
    parent = Mesh(verts, tets, cell_tags=labels)
    fluid, fmap = extract_submesh(parent, labels == 0)
    solid, smap = extract_submesh(parent, (labels == 1) & (lay < n_layers_lv))
    interface = _match_parent_vertices(fmap, smap)

    dz_lv = (z_base - z_apex) / n_layers_lv
    eps = 0.2 * min(dz_lv, dz_shoulder / n_layers_shoulder)

    def radial(p):
        return np.linalg.norm(p[:, :2], axis=1)

    faces, tags = tag_boundary(fluid.vertices, fluid.tets, [
        (4, lambda p: p[:, 2] < z_apex + eps),
        (2, lambda p: p[:, 2] > z_top - eps),
        (1, lambda p: (p[:, 2] > z_base + eps)
            & (p[:, 2] < z_base + dz_shoulder - eps)),
        (5, lambda p: p[:, 2] >= z_base + dz_shoulder - eps),
        (3, lambda p: np.ones(len(p), bool)),
    ])
    fluid.boundary_facets, fluid.facet_tags = faces, tags
    cent_z = fluid.vertices[fluid.tets].mean(axis=1)[:, 2]
    fluid.cell_tags = np.where(cent_z < z_base, 1, 2)  # 1 cavity, 2 tract
    fluid._cache.clear()

    faces, tags = tag_boundary(solid.vertices, solid.tets, [
        (1, lambda p: p[:, 2] > z_base - eps),
        (2, lambda p: p[:, 2] < z_apex + eps),
        (3, lambda p: radial(p) <= profile(p[:, 2]) + 0.5 * thickness),
        (4, lambda p: np.ones(len(p), bool)),
    ])
    solid.boundary_facets, solid.facet_tags = faces, tags
    solid._cache.clear()

    geo = {"r_base": r_base, "z_base": z_base, "thickness": thickness,
           "r_tube": r_tube, "l_tube": l_tube, "dz_shoulder": dz_shoulder,
           "z_apex": z_apex, "z_top": z_top, "profile": profile}
    return fluid, solid, interface, geo


def _tag_tube_like(mesh: Mesh, length, r_int, eps, solid: bool, outer=None):
    def radial(p):
        return np.linalg.norm(p[:, :2], axis=1)

    taggers = [
        (1, lambda p: p[:, 2] < eps),
        (2, lambda p: p[:, 2] > length - eps),
    ]
    if solid:
        # face centroids of chordal triangles fall inside the circle, so
        # split inner from outer surface at the mid-wall radius
        r_mid = 0.5 * (r_int + outer)
        taggers += [
            (4, lambda p: radial(p) > r_mid),
            (3, lambda p: radial(p) <= r_mid),
        ]
    else:
        taggers += [(3, lambda p: np.ones(len(p), bool))]
    faces, tags = tag_boundary(mesh.vertices, mesh.tets, taggers)
    mesh.boundary_facets = faces
    mesh.facet_tags = tags
    mesh._cache.clear()


def extract_submesh(mesh: Mesh, cell_mask: np.ndarray):
    """Submesh of the masked cells. Returns (submesh, parent_vertex_ids)."""
    cells = mesh.tets[cell_mask]
    used = np.unique(cells)
    remap = -np.ones(mesh.num_vertices, dtype=np.int64)
    remap[used] = np.arange(len(used))
    sub = Mesh(mesh.vertices[used], remap[cells],
               cell_tags=mesh.cell_tags[cell_mask])
    return sub, used


def _match_parent_vertices(map_a: np.ndarray, map_b: np.ndarray) -> np.ndarray:
    """(n, 2) local index pairs of vertices shared by two submeshes."""
    common = np.intersect1d(map_a, map_b)
    ia = np.searchsorted(map_a, common)
    ib = np.searchsorted(map_b, common)
    return np.column_stack([ia, ib])
