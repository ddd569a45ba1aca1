"""Tetrahedral meshes with tagged boundaries and subdomains."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MeshError(Exception):
    pass


@dataclass
class Mesh:
    """Tetrahedral mesh.

    vertices : (nv, 3) coordinates [m]
    tets     : (nt, 4) vertex indices, positively oriented
    cell_tags: (nt,) integer subdomain tag per cell
    boundary_facets: (nf, 3) vertex indices of tagged boundary triangles
    facet_tags: (nf,) integer tag per boundary facet
    """

    vertices: np.ndarray
    tets: np.ndarray
    cell_tags: np.ndarray = None
    boundary_facets: np.ndarray = None
    facet_tags: np.ndarray = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.tets = np.ascontiguousarray(self.tets, dtype=np.int64)
        if self.cell_tags is None:
            self.cell_tags = np.zeros(len(self.tets), dtype=np.int64)
        else:
            self.cell_tags = np.asarray(self.cell_tags, dtype=np.int64)
        if self.boundary_facets is None:
            self.boundary_facets = np.empty((0, 3), dtype=np.int64)
            self.facet_tags = np.empty(0, dtype=np.int64)
        else:
            self.boundary_facets = np.asarray(self.boundary_facets, dtype=np.int64)
            self.facet_tags = np.asarray(self.facet_tags, dtype=np.int64)

    # -- basic counts ------------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.tets)

    # -- geometry ----------------------------------------------------------

    def edge_matrices(self) -> np.ndarray:
        """(nt, 3, 3) columns are x1-x0, x2-x0, x3-x0."""
        if "edge_mat" not in self._cache:
            x = self.vertices[self.tets]  # (nt, 4, 3)
            self._cache["edge_mat"] = np.stack(
                [x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=2
            )
        return self._cache["edge_mat"]

    def cell_volumes(self) -> np.ndarray:
        if "volumes" not in self._cache:
            self._cache["volumes"] = np.linalg.det(self.edge_matrices()) / 6.0
        return self._cache["volumes"]

    def barycentric_gradients(self) -> np.ndarray:
        """(nt, 4, 3) gradients of the four barycentric coordinates."""
        if "bgrad" not in self._cache:
            Jinv = np.linalg.inv(self.edge_matrices())  # (nt,3,3)
            g = np.empty((self.num_cells, 4, 3))
            # rows of J^{-1} are the gradients of lambda_1..3
            g[:, 1:, :] = Jinv
            g[:, 0, :] = -g[:, 1:, :].sum(axis=1)
            self._cache["bgrad"] = g
        return self._cache["bgrad"]

    def cell_diameters(self) -> np.ndarray:
        """Longest edge per cell."""
        if "diam" not in self._cache:
            x = self.vertices[self.tets]
            pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
            d = np.stack(
                [np.linalg.norm(x[:, a] - x[:, b], axis=1) for a, b in pairs], axis=1
            )
            self._cache["diam"] = d.max(axis=1)
        return self._cache["diam"]

    def average_cell_size(self) -> float:
        return float(self.cell_diameters().mean())

    def edges(self) -> np.ndarray:
        """Unique mesh edges (ne, 2), sorted vertex pairs, lexicographic."""
        if "edges" not in self._cache:
            pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
            e = np.concatenate([self.tets[:, p] for p in pairs], axis=0)
            e = np.sort(e, axis=1)
            self._cache["edges"] = np.unique(e, axis=0)
        return self._cache["edges"]

    def validate(self):
        """Raise MeshError on degenerate or inverted cells."""
        vols = self.cell_volumes()
        bad = np.flatnonzero(vols <= 0.0)
        if len(bad):
            raise MeshError(
                f"cell {bad[0]} has non-positive volume {vols[bad[0]]:.3e} "
                f"({len(bad)} cells total)"
            )

    # -- boundary facet geometry --------------------------------------------

    def facet_areas_normals(self) -> tuple[np.ndarray, np.ndarray]:
        """Areas and outward unit normals of the tagged boundary facets."""
        if "facet_geom" not in self._cache:
            f = self.boundary_facets
            x = self.vertices[f]
            cr = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
            areas = 0.5 * np.linalg.norm(cr, axis=1)
            normals = cr / np.linalg.norm(cr, axis=1)[:, None]
            # orient outward using the cell each facet belongs to
            owner = self.facet_owner_cells()
            cells = self.tets[owner]
            centroid_cell = self.vertices[cells].mean(axis=1)
            centroid_facet = x.mean(axis=1)
            flip = np.einsum("ij,ij->i", normals, centroid_facet - centroid_cell) < 0
            normals[flip] *= -1.0
            self._cache["facet_geom"] = (areas, normals)
        return self._cache["facet_geom"]

    def facet_owner_cells(self) -> np.ndarray:
        """Cell index owning each boundary facet."""
        if "facet_owner" not in self._cache:
            faces = {(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)}
            lut = {}
            for combo in faces:
                tri = np.sort(self.tets[:, list(combo)], axis=1)
                for c, key in enumerate(map(tuple, tri)):
                    lut[key] = c
            keys = map(tuple, np.sort(self.boundary_facets, axis=1))
            try:
                owner = np.array([lut[k] for k in keys], dtype=np.int64)
            except KeyError as exc:
                raise MeshError(f"boundary facet {exc} is not a face of any cell")
            self._cache["facet_owner"] = owner
        return self._cache["facet_owner"]

    def facets_with_tag(self, tag: int) -> np.ndarray:
        return self.boundary_facets[self.facet_tags == tag]

    def vertices_on_tags(self, tags) -> np.ndarray:
        """Sorted unique vertex indices lying on the given facet tags."""
        tags = np.atleast_1d(tags)
        mask = np.isin(self.facet_tags, tags)
        return np.unique(self.boundary_facets[mask])

    def locate(self, points: np.ndarray, k_candidates: int = 24):
        """Owning cells and barycentric coordinates of the given points.

        Candidate cells come from a centroid kd-tree; the cell with the
        largest minimal barycentric coordinate wins, so points outside the
        mesh fall back to the nearest candidate (clipped extrapolation).
        Returns (cells, bary) with bary of shape (n, 4).
        """
        from scipy.spatial import cKDTree

        if "centroid_tree" not in self._cache:
            centroids = self.vertices[self.tets].mean(axis=1)
            self._cache["centroid_tree"] = cKDTree(centroids)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        k = min(k_candidates, self.num_cells)
        _, cand = self._cache["centroid_tree"].query(pts, k=k)
        cand = cand.reshape(len(pts), k)
        grads = self.barycentric_gradients()
        x0 = self.vertices[self.tets[:, 0]]
        best_cell = cand[:, 0].copy()
        best_bary = np.zeros((len(pts), 4))
        best_min = np.full(len(pts), -np.inf)
        for j in range(k):
            c = cand[:, j]
            lam = np.einsum("pax,px->pa", grads[c], pts - x0[c])
            lam[:, 0] += 1.0
            lmin = lam.min(axis=1)
            better = lmin > best_min
            best_cell[better] = c[better]
            best_bary[better] = lam[better]
            best_min[better] = lmin[better]
        return best_cell, best_bary

    def displaced(self, displacement: np.ndarray) -> "Mesh":
        """New mesh with vertices moved by a (nv, 3) displacement field."""
        return Mesh(
            self.vertices + displacement,
            self.tets,
            self.cell_tags,
            self.boundary_facets,
            self.facet_tags,
        )
