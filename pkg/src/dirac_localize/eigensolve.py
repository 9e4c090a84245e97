"""Smallest-eigenpair solvers for sparse symmetric positive semidefinite
operators.

The default is a block LOBPCG with a clipped-diagonal preconditioner and
soft locking; a Lanczos variant with full reorthogonalization and a dense
LAPACK oracle (for cross-validation at small sizes) sit beside it.  A
deterministic seed fixes the starting block, so identical requests give
identical results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .sparse_ops import GramOperator, operator_norm_estimate

__all__ = ["EigenRequest", "EigenResult", "lowest_eigenpairs", "gap_split"]

DENSE_LIMIT = 4096


@dataclass(frozen=True)
class EigenRequest:
    operator: object
    k: int
    tol: float = 1e-8
    max_iter: int = 400
    seed: int = 0
    method: str = "lobpcg"
    debug: bool = False  # randomized symmetry probe before iterating

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.method not in ("lobpcg", "lanczos", "dense_oracle"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    iterations: int
    converged: np.ndarray
    norm_estimate: float = 0.0

    def all_converged(self) -> bool:
        return bool(np.all(self.converged))

    def to_json_dict(self) -> dict:
        return {
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "residuals": [float(v) for v in self.residuals],
            "iterations": int(self.iterations),
            "converged": [bool(v) for v in self.converged],
            "norm_estimate": float(self.norm_estimate),
        }


def _op_tuple(operator):
    """Return (matvec on blocks, dimension, diagonal or None, dense or None)."""
    if isinstance(operator, np.ndarray):
        return (lambda X: operator @ X), operator.shape[0], np.diag(operator).copy(), operator
    if sp.issparse(operator):
        A = operator.tocsr()
        return (lambda X: A @ X), A.shape[0], A.diagonal(), None
    if isinstance(operator, GramOperator):
        return (lambda X: operator @ X), operator.shape[0], operator.diagonal(), None
    if hasattr(operator, "matvec"):
        diag = operator.diagonal() if hasattr(operator, "diagonal") else None
        return (lambda X: operator @ X), operator.shape[0], diag, None
    raise TypeError(f"unsupported operator type {type(operator)!r}")


def _to_dense(operator, n: int) -> np.ndarray:
    if isinstance(operator, np.ndarray):
        return operator
    if sp.issparse(operator):
        return operator.toarray()
    if isinstance(operator, GramOperator):
        return operator.to_sparse().toarray()
    mv, n, _, _ = _op_tuple(operator)
    return mv(np.eye(n))


def _orthonormalize(V: np.ndarray, against: np.ndarray | None = None,
                    rel_cut: float = 1e-10) -> np.ndarray:
    """SVD-based orthonormalization, dropping near-dependent columns."""
    if against is not None and against.shape[1]:
        V = V - against @ (against.T @ V)
        V = V - against @ (against.T @ V)
    if V.shape[1] == 0:
        return V
    U, sig, _ = np.linalg.svd(V, full_matrices=False)
    if sig.size == 0 or sig[0] == 0.0:
        return np.zeros((V.shape[0], 0))
    keep = sig > rel_cut * sig[0]
    return U[:, keep]


def lowest_eigenpairs(req: EigenRequest) -> EigenResult:
    """k smallest eigenpairs of a symmetric PSD operator.

    Returns a partial result with per-pair converged flags when the
    iteration budget runs out; nothing is reported silently.
    """
    matvec, n, diag, dense = _op_tuple(req.operator)
    k = min(req.k, n)
    if req.debug:
        rng = np.random.default_rng(req.seed + 99)
        worst = 0.0
        scale = 0.0
        for _ in range(3):
            u = rng.normal(size=n)
            v = rng.normal(size=n)
            au, av = matvec(u), matvec(v)
            worst = max(worst, abs(np.dot(au, v) - np.dot(u, av)))
            scale = max(scale, np.linalg.norm(au) * np.linalg.norm(v))
        if worst > 1e-10 * max(scale, 1e-300):
            raise ValueError(f"operator is not symmetric: probe defect {worst:.3e}")
    if req.method == "dense_oracle":
        if n > DENSE_LIMIT:
            raise ValueError(f"dense oracle limited to dim <= {DENSE_LIMIT}, got {n}")
        A = dense if dense is not None else _to_dense(req.operator, n)
        evals, evecs = np.linalg.eigh(A)
        vals, vecs = evals[:k], evecs[:, :k]
        normA = max(abs(evals[0]), abs(evals[-1]), 1e-300)
        res = np.array(
            [np.linalg.norm(A @ vecs[:, i] - vals[i] * vecs[:, i])
             / max(abs(vals[i]), normA * 1e-8, 1e-300) for i in range(k)]
        )
        return EigenResult(vals, vecs, res, 0, np.ones(k, bool), normA)
    if req.method == "lanczos":
        return _lanczos(matvec, n, k, req)
    return _lobpcg(matvec, n, k, diag, req)


def _residual_scale(theta: float, norm_est: float) -> float:
    return max(abs(theta), norm_est, 1e-300)


def _lobpcg(matvec, n, k, diag, req: EigenRequest) -> EigenResult:
    rng = np.random.default_rng(req.seed)
    m = min(k + 4, n)
    norm_est = operator_norm_estimate(
        type("O", (), {"__matmul__": lambda self, x: matvec(x)})(), n,
        seed=req.seed + 1,
    )
    if diag is not None:
        floor = 1e-8 * max(float(np.max(np.abs(diag))), 1e-300)
        pdiag = 1.0 / np.maximum(np.abs(diag), floor)
    else:
        pdiag = None

    X = _orthonormalize(rng.normal(size=(n, m)))
    AX = matvec(X)
    P = np.zeros((n, 0))
    AP = np.zeros((n, 0))
    theta = np.zeros(m)
    best: dict[int, tuple[float, np.ndarray, float]] = {}
    iterations = 0

    for iterations in range(1, req.max_iter + 1):
        H = X.T @ AX
        H = 0.5 * (H + H.T)
        evals, Y = np.linalg.eigh(H)
        X = X @ Y
        AX = AX @ Y
        theta = evals
        R = AX - X * theta
        resid = np.array(
            [np.linalg.norm(R[:, i]) / _residual_scale(theta[i], norm_est)
             for i in range(m)]
        )
        for i in range(k):
            if i not in best or resid[i] < best[i][2]:
                best[i] = (theta[i], X[:, i].copy(), resid[i])
        conv = resid[:k] <= req.tol
        if np.all(conv):
            break
        if not np.all(np.isfinite(R)):
            raise FloatingPointError("NaN breakdown in LOBPCG iteration")
        # soft locking: converged leading pairs keep their place in the
        # Rayleigh-Ritz basis but contribute no new search directions
        active = np.ones(m, bool)
        active[:k] = ~conv
        W = R[:, active]
        if pdiag is not None:
            W = W * pdiag[:, None]
        W = _orthonormalize(W, against=X)
        Pq = _orthonormalize(P, against=np.hstack([X, W]) if W.shape[1] else X)
        S = np.hstack([X, W, Pq])
        AS = np.hstack([AX, matvec(W) if W.shape[1] else W, matvec(Pq) if Pq.shape[1] else Pq])
        G = S.T @ AS
        G = 0.5 * (G + G.T)
        evals, Y = np.linalg.eigh(G)
        Y = Y[:, :m]
        Xn = S @ Y
        AXn = AS @ Y
        # implicit-P update: the component of the new block outside span(X)
        Yp = Y.copy()
        Yp[:m, :] = 0.0
        P = S @ Yp
        AP = AS @ Yp
        X, AX = Xn, AXn

    order = np.argsort([best[i][0] for i in range(k)])
    vals = np.array([best[i][0] for i in range(k)])[order]
    vecs = np.column_stack([best[i][1] for i in range(k)])[:, order]
    res = np.array([best[i][2] for i in range(k)])[order]
    return EigenResult(vals, vecs, res, iterations, res <= req.tol, norm_est)


def _lanczos(matvec, n, k, req: EigenRequest) -> EigenResult:
    """Lanczos with full reorthogonalization targeting the low end."""
    rng = np.random.default_rng(req.seed)
    steps = min(n, max(2 * k + 10, min(req.max_iter, n)))
    Q = np.zeros((n, steps))
    alphas = np.zeros(steps)
    betas = np.zeros(max(steps - 1, 0))
    q = rng.normal(size=n)
    q /= np.linalg.norm(q)
    Q[:, 0] = q
    norm_est = 0.0
    u = matvec(q)
    alphas[0] = np.dot(q, u)
    r = u - alphas[0] * q
    used = 1
    for j in range(1, steps):
        r -= Q[:, :j] @ (Q[:, :j].T @ r)
        r -= Q[:, :j] @ (Q[:, :j].T @ r)
        beta = np.linalg.norm(r)
        if beta < 1e-14 * max(norm_est, 1.0):
            break
        betas[j - 1] = beta
        q = r / beta
        Q[:, j] = q
        u = matvec(q)
        alphas[j] = np.dot(q, u)
        norm_est = max(norm_est, abs(alphas[j]) + 2 * beta)
        r = u - alphas[j] * q - beta * Q[:, j - 1]
        used = j + 1
    T = np.diag(alphas[:used]) + np.diag(betas[: used - 1], 1) + np.diag(betas[: used - 1], -1)
    evals, Y = np.linalg.eigh(T)
    kk = min(k, used)
    vals = evals[:kk]
    vecs = Q[:, :used] @ Y[:, :kk]
    norm_est = max(norm_est, abs(evals[-1]), 1e-300)
    res = np.array(
        [np.linalg.norm(matvec(vecs[:, i]) - vals[i] * vecs[:, i])
         / _residual_scale(vals[i], norm_est) for i in range(kk)]
    )
    if kk < k:
        pad = k - kk
        vals = np.concatenate([vals, np.full(pad, np.nan)])
        vecs = np.hstack([vecs, np.zeros((n, pad))])
        res = np.concatenate([res, np.full(pad, np.inf)])
    return EigenResult(vals, vecs, res, used, res <= req.tol, norm_est)


def gap_split(eigenvalues, min_ratio: float) -> tuple[int, float] | None:
    """Largest relative spectral gap in an ascending eigenvalue list.

    Returns (cluster_size, ratio) for the split maximizing
    lam_{i+1} / max(lam_i, floor) with floor = 1e-12 * lam_max, or None when
    no ratio reaches ``min_ratio``.
    """
    ev = np.asarray(list(eigenvalues), dtype=float)
    if ev.size == 0:
        raise ValueError("eigenvalue list is empty")
    if min_ratio <= 1:
        raise ValueError("min_ratio must exceed 1")
    if ev.size == 1:
        return None
    floor = 1e-12 * float(np.max(np.abs(ev)))
    best = None
    for i in range(ev.size - 1):
        denom = max(ev[i], floor)
        if denom <= 0:
            continue
        ratio = ev[i + 1] / denom
        if best is None or ratio > best[1]:
            best = (i + 1, float(ratio))
    if best is None or best[1] < min_ratio:
        return None
    return best
