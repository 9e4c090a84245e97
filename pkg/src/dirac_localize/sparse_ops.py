"""Thin helpers around scipy sparse matrices used as first-order operators.

Operators are stored in CSR; squared operators (A^T A and A A^T) are exposed
as matvec compositions so large grids never form a dense product.  The
coordinate text export exists for external cross-checks.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator


class GramOperator(LinearOperator):
    """A^T A (or A A^T) as an implicit symmetric positive semidefinite map."""

    def __init__(self, factor: sp.spmatrix, adjoint_side: bool = False):
        self.factor = factor.tocsr()
        self.adjoint_side = adjoint_side
        n = self.factor.shape[1] if not adjoint_side else self.factor.shape[0]
        super().__init__(dtype=float, shape=(n, n))

    def _matvec(self, x):
        if self.adjoint_side:
            return self.factor @ (self.factor.T @ x)
        return self.factor.T @ (self.factor @ x)

    def _matmat(self, X):
        if self.adjoint_side:
            return self.factor @ (self.factor.T @ X)
        return self.factor.T @ (self.factor @ X)

    def diagonal(self) -> np.ndarray:
        sq = self.factor.copy()
        sq.data = sq.data**2
        axis = 1 if self.adjoint_side else 0
        return np.asarray(sq.sum(axis=axis)).ravel()

    def to_sparse(self) -> sp.csr_matrix:
        if self.adjoint_side:
            return (self.factor @ self.factor.T).tocsr()
        return (self.factor.T @ self.factor).tocsr()


def export_coo_text(A: sp.spmatrix, path) -> None:
    """Write (row, col, value) triplets, one per line, zero-based indices."""
    coo = A.tocoo()
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v!r}\n")


def symmetry_probe(op, n: int, seed: int = 0, trials: int = 3) -> float:
    """Max |<Au, v> - <u, Av>| over random unit pairs; debug aid."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        u = rng.normal(size=n)
        v = rng.normal(size=n)
        u /= np.linalg.norm(u)
        v /= np.linalg.norm(v)
        worst = max(worst, abs(np.dot(op @ u, v) - np.dot(u, op @ v)))
    return worst


def operator_norm_estimate(op, n: int, seed: int = 0, iters: int = 20) -> float:
    """Power-iteration estimate of the spectral norm of a symmetric operator."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    x /= np.linalg.norm(x)
    lam = 1.0
    for _ in range(iters):
        y = op @ x
        lam = float(np.linalg.norm(y))
        if lam == 0.0:
            return 0.0
        x = y / lam
    return lam
