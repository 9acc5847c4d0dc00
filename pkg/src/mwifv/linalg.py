"""Sparse linear sub-solvers used inside the outer iterations."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

METHODS = ("direct", "cg", "bicgstab")


class LinearSolveError(RuntimeError):
    pass


def solve(A, b, x0=None, method: str = "direct", rtol: float = 1e-8, maxiter: int | None = None) -> np.ndarray:
    """Solve ``A x = b``.

    ``direct`` uses SuperLU. ``cg`` (symmetric systems) and ``bicgstab`` use a
    Jacobi preconditioner and the relative tolerance ``rtol``.
    """
    if method == "direct":
        return spla.spsolve(sp.csc_matrix(A), b)
    if method not in METHODS:
        raise ValueError(f"unknown linear solver {method!r}")
    A = sp.csr_matrix(A)
    diag = A.diagonal()
    M = sp.diags(1.0 / np.where(diag != 0.0, diag, 1.0))
    if np.linalg.norm(b) == 0.0:
        return np.zeros_like(b)
    if method == "cg":
        x, info = spla.cg(A, b, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=M)
    else:
        x, info = spla.bicgstab(A, b, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=M)
    if info < 0:
        raise LinearSolveError(f"{method} breakdown (info={info})")
    return x


def solve_columns(A, B, X0=None, method: str = "direct", rtol: float = 1e-8) -> np.ndarray:
    """Solve ``A X = B`` column by column, sharing one factorization when direct."""
    B = np.asarray(B, dtype=float)
    if method == "direct":
        lu = spla.splu(sp.csc_matrix(A))
        return np.column_stack([lu.solve(B[:, k]) for k in range(B.shape[1])])
    cols = []
    for k in range(B.shape[1]):
        cols.append(solve(A, B[:, k], None if X0 is None else X0[:, k], method, rtol))
    return np.column_stack(cols)
