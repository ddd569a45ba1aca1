"""Krylov solvers (CG, GMRES) with pluggable preconditioners."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(Exception):
    def __init__(self, message: str, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class Preconditioner:
    """Interface: apply(r) approximates A^{-1} r.

    AMG or other external preconditioners plug in by implementing apply().
    """

    def apply(self, r: np.ndarray) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def as_linear_operator(self, n: int) -> spla.LinearOperator:
        return spla.LinearOperator((n, n), matvec=self.apply)


class IdentityPreconditioner(Preconditioner):
    def apply(self, r):
        return r


class JacobiPreconditioner(Preconditioner):
    def __init__(self, A: sp.spmatrix):
        d = A.diagonal()
        if np.any(d == 0):
            raise ValueError("zero diagonal entry; Jacobi preconditioner undefined")
        self.inv_diag = 1.0 / d

    def apply(self, r):
        return self.inv_diag * r


class BlockLowerTriangularPreconditioner(Preconditioner):
    """Block lower-triangular preconditioner for 2x2 block systems.

    Solves [A11 0; A21 A22] z = r with direct factorizations of the
    diagonal blocks.
    """

    def __init__(self, A: sp.spmatrix, split: int):
        A = A.tocsr()
        self.split = split
        self.A11 = spla.splu(A[:split, :split].tocsc())
        self.A21 = A[split:, :split].tocsr()
        self.A22 = spla.splu(A[split:, split:].tocsc())

    def apply(self, r):
        z1 = self.A11.solve(r[: self.split])
        z2 = self.A22.solve(r[self.split:] - self.A21 @ z1)
        return np.concatenate([z1, z2])


class LuPreconditioner(Preconditioner):
    """Exact sparse LU used as a preconditioner (one-iteration Krylov)."""

    def __init__(self, A: sp.spmatrix):
        self.lu = spla.splu(A.tocsc())

    def apply(self, r):
        return self.lu.solve(r)


def solve_cg(A, b, tol: float = 1e-10, max_iter: int = 1000,
             preconditioner: Preconditioner | None = None,
             x0: np.ndarray | None = None) -> np.ndarray:
    """Preconditioned conjugate gradients; requires SPD matrix.

    Terminates when ||b - Ax|| <= tol * ||b||. Raises SolverError with the
    residual history on breakdown or non-convergence.
    """
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else x0.astype(float).copy()
    M = preconditioner or IdentityPreconditioner()
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    history = [np.linalg.norm(r) / bnorm]
    if history[-1] <= tol:
        return x
    z = M.apply(r)
    p = z.copy()
    rz = r @ z
    for _ in range(max_iter):
        Ap = A @ p
        pAp = p @ Ap
        if not np.isfinite(pAp) or pAp <= 0:
            raise SolverError(
                f"CG breakdown: p.Ap = {pAp!r} (matrix not SPD?)", history
            )
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        history.append(np.linalg.norm(r) / bnorm)
        if history[-1] <= tol:
            return x
        z = M.apply(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"CG did not converge in {max_iter} iterations "
        f"(relative residual {history[-1]:.3e})", history
    )


def solve_gmres(A, b, tol: float = 1e-10, max_iter: int = 1000,
                preconditioner: Preconditioner | None = None,
                restart: int = 100, x0: np.ndarray | None = None) -> np.ndarray:
    """Right-preconditioned GMRES via scipy, with residual-history diagnostics."""
    b = np.asarray(b, dtype=float)
    if np.linalg.norm(b) == 0.0:
        return np.zeros_like(b)
    n = len(b)
    M = (preconditioner or IdentityPreconditioner()).as_linear_operator(n)
    history = []

    def callback(rk):
        history.append(float(rk))

    x, info = spla.gmres(
        A, b, x0=x0, rtol=tol, atol=0.0, restart=min(restart, n),
        maxiter=max_iter, M=M, callback=callback, callback_type="pr_norm",
    )
    if info != 0 or not np.all(np.isfinite(x)):
        raise SolverError(
            f"GMRES did not converge in {max_iter} iterations (info={info})",
            history,
        )
    return x
