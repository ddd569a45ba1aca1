"""Simplex quadrature via conical (Duffy) products of Gauss-Jacobi rules.

Rules are generated programmatically so any polynomial degree is available;
points per direction n gives exactness up to degree 2n-1. All weights are
positive.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def tet_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature on the reference tetrahedron, barycentric points.

    Returns (points, weights): points (nq, 4) barycentric coordinates,
    weights summing to 1 (fraction of reference volume).
    """
    n = degree // 2 + 1
    xl, wl = roots_jacobi(n, 0.0, 0.0)
    x1, w1 = roots_jacobi(n, 1.0, 0.0)
    x2, w2 = roots_jacobi(n, 2.0, 0.0)
    # map from [-1,1] to [0,1]
    xl, x1, x2 = (xl + 1) / 2, (x1 + 1) / 2, (x2 + 1) / 2
    pts, wts = [], []
    for a, wa in zip(x2, w2):
        for b, wb in zip(x1, w1):
            for c, wc in zip(xl, wl):
                x = a
                y = b * (1 - a)
                z = c * (1 - a) * (1 - b)
                pts.append((x, y, z))
                wts.append(wa * wb * wc)
    pts = np.array(pts)
    wts = np.array(wts)
    wts /= wts.sum()
    bary = np.column_stack([1 - pts.sum(axis=1), pts])
    return bary, wts


@lru_cache(maxsize=None)
def tri_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature on the reference triangle, barycentric points.

    Returns (points, weights): points (nq, 3), weights summing to 1.
    """
    n = degree // 2 + 1
    xl, wl = roots_jacobi(n, 0.0, 0.0)
    x1, w1 = roots_jacobi(n, 1.0, 0.0)
    xl, x1 = (xl + 1) / 2, (x1 + 1) / 2
    pts, wts = [], []
    for a, wa in zip(x1, w1):
        for b, wb in zip(xl, wl):
            x = a
            y = b * (1 - a)
            pts.append((x, y))
            wts.append(wa * wb)
    pts = np.array(pts)
    wts = np.array(wts)
    wts /= wts.sum()
    bary = np.column_stack([1 - pts.sum(axis=1), pts])
    return bary, wts
