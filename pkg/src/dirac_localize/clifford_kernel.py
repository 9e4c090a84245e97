"""Finite-dimensional real Clifford-module machinery.

A graded module E = E0 + E1 is stored through the E0 -> E1 blocks of its
symbol generators; skew-adjointness forces the E1 -> E0 block of c(u) to be
-c_u^T.  On top of that sit the perturbation jets (value and first/second
normal derivatives of a bundle map A at a singular point) and the pointwise
structure analysis: kernel bundles, the symmetric endomorphisms M_alpha, the
common square Q, the sum C = sum_alpha M_alpha and its eigenvalue ladder
(codim - 2k) * lambda.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CliffordModule",
    "PerturbationJet",
    "StructureReport",
    "JetError",
    "build_witten_module",
    "check_concentrating_pair",
    "check_bundle_cross_term",
    "analyze_jet",
    "witten_morse_jet",
]


class JetError(ValueError):
    """Raised when a perturbation jet violates a structural precondition."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CliffordModule:
    """Graded Clifford module with generator blocks c^1..c^n : E0 -> E1.

    The full operator of c(u) on E0 + E1 is [[0, -c_u^T], [c_u, 0]].
    ``hat_gens`` optionally holds the E0 -> E1 blocks of a commuting
    symmetric action (present for the exterior-algebra modules).
    """

    n: int
    dim0: int
    dim1: int
    gens: tuple[np.ndarray, ...]
    hat_gens: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "gens", tuple(_freeze(g) for g in self.gens))
        if self.hat_gens is not None:
            object.__setattr__(
                self, "hat_gens", tuple(_freeze(g) for g in self.hat_gens)
            )

    def clifford_residual(self) -> float:
        """Max violation of c^u c^v + c^v c^u = -2 delta_uv on both parities."""
        worst = 0.0
        eye0 = np.eye(self.dim0)
        eye1 = np.eye(self.dim1)
        for u, cu in enumerate(self.gens):
            for v, cv in enumerate(self.gens):
                target = 2.0 * (u == v)
                r0 = cu.T @ cv + cv.T @ cu - target * eye0
                r1 = cu @ cv.T + cv @ cu.T - target * eye1
                worst = max(worst, np.abs(r0).max(), np.abs(r1).max())
        return worst

    def orthogonality_residual(self) -> float:
        """Max violation of (c^u)^T c^u = Id."""
        eye0 = np.eye(self.dim0)
        return max(np.abs(g.T @ g - eye0).max() for g in self.gens)

    def covector_block(self, v: np.ndarray) -> np.ndarray:
        """E0 -> E1 block of c(v) for an ambient covector v."""
        v = np.asarray(v, dtype=float)
        out = np.zeros((self.dim1, self.dim0))
        for comp, g in zip(v, self.gens):
            out += comp * g
        return out


def _wedge_sign(mask: int, axis: int) -> int:
    """Sign (-1)^{#(i in mask, i < axis)}; axis must not be in mask."""
    below = mask & ((1 << axis) - 1)
    return -1 if bin(below).count("1") % 2 else 1


def _subset_bases(n: int) -> tuple[list[int], list[int], dict[int, int], dict[int, int]]:
    even, odd = [], []
    for mask in range(1 << n):
        (even if bin(mask).count("1") % 2 == 0 else odd).append(mask)
    even.sort(key=lambda m: (bin(m).count("1"), m))
    odd.sort(key=lambda m: (bin(m).count("1"), m))
    return even, odd, {m: i for i, m in enumerate(even)}, {m: i for i, m in enumerate(odd)}


def build_witten_module(n: int) -> CliffordModule:
    """Exterior-algebra Clifford module on R^n.

    E0 = even forms, E1 = odd forms, c(dx^a) = dx^a wedge - contraction and
    the commuting symmetric action hat(dx^a) = dx^a wedge + contraction.
    Basis elements are coordinate forms e_I, ordered by (degree, index set).
    """
    if not 1 <= n <= 8:
        raise ValueError(f"dimension n must be in 1..8, got {n}")
    even, odd, even_pos, odd_pos = _subset_bases(n)
    d = 1 << (n - 1)
    gens, hats = [], []
    for a in range(n):
        bit = 1 << a
        c = np.zeros((d, d))
        hat = np.zeros((d, d))
        for j, mask in enumerate(even):
            if mask & bit:
                # contraction only
                tgt = mask ^ bit
                s = _wedge_sign(tgt, a)
                c[odd_pos[tgt], j] = -s
                hat[odd_pos[tgt], j] = s
            else:
                tgt = mask | bit
                s = _wedge_sign(mask, a)
                c[odd_pos[tgt], j] = s
                hat[odd_pos[tgt], j] = s
        gens.append(c)
        hats.append(hat)
    return CliffordModule(n=n, dim0=d, dim1=d, gens=tuple(gens), hat_gens=tuple(hats))


def form_basis_labels(n: int, parity: int) -> list[tuple[int, ...]]:
    """Index sets (as sorted tuples of axes) labelling the parity basis."""
    even, odd, _, _ = _subset_bases(n)
    masks = even if parity == 0 else odd
    return [tuple(a for a in range(n) if m & (1 << a)) for m in masks]


def check_concentrating_pair(
    module: CliffordModule, A: np.ndarray, tol: float = 1e-12
) -> tuple[bool, float]:
    """Test A^T c^u = (c^u)^T A for every generator.

    Returns (ok, violation) where violation is the max-abs entry of the
    worst commutation defect; ok iff violation <= tol.
    """
    A = np.asarray(A, dtype=float)
    if A.shape != (module.dim1, module.dim0):
        raise ValueError(
            f"perturbation shape {A.shape} does not match module "
            f"({module.dim1}, {module.dim0})"
        )
    violation = 0.0
    for cu in module.gens:
        violation = max(violation, np.abs(A.T @ cu - cu.T @ A).max())
    return violation <= tol, violation


def check_bundle_cross_term(
    module: CliffordModule,
    A_field,
    npoints: int = 9,
    tol: float = 1e-10,
) -> bool:
    """Check that D^T A + A^T D carries no first-order part.

    ``A_field`` maps a 1D coordinate array to stacked matrices of shape
    (npoints, dim1, dim0).  The operator is assembled with a forward
    difference on a small Dirichlet grid; on the composite K the symbol of
    the first-order part sits in the off-diagonal blocks as
    h * K_{i,i+1} = A_i^T c, and it cancels against the transposed stencil
    exactly when A_i^T c is symmetric, the symbol-level restatement of the
    concentration condition.
    """
    h = 1.0 / npoints
    x = (np.arange(npoints) + 0.5) * h
    blocks = np.asarray(A_field(x), dtype=float)
    if blocks.shape != (npoints, module.dim1, module.dim0):
        raise ValueError("A_field must return (npoints, dim1, dim0) matrices")
    d0, d1 = module.dim0, module.dim1
    N0, N1 = npoints * d0, npoints * d1

    D = np.zeros((N1, N0))
    c1 = module.gens[0]
    for i in range(npoints):
        D[i * d1:(i + 1) * d1, i * d0:(i + 1) * d0] = -c1 / h
        if i + 1 < npoints:
            D[i * d1:(i + 1) * d1, (i + 1) * d0:(i + 2) * d0] = c1 / h
    Amat = np.zeros((N1, N0))
    for i in range(npoints):
        Amat[i * d1:(i + 1) * d1, i * d0:(i + 1) * d0] = blocks[i]

    K = D.T @ Amat + Amat.T @ D
    scale = max(np.abs(blocks).max(), 1.0)
    worst = 0.0
    for i in range(npoints - 1):
        blk = h * K[i * d0:(i + 1) * d0, (i + 1) * d0:(i + 2) * d0]
        worst = max(worst, np.abs(blk - blk.T).max())
    return worst <= tol * scale


@dataclass(frozen=True)
class PerturbationJet:
    """Value and first/second normal derivatives of A at a singular fiber.

    ``normal_frame`` holds the orthonormal normal directions as rows in
    ambient coordinates; c(e^alpha) is recovered from the module generators.
    ``A2[a][b]`` is the symmetric second-derivative family (may be zero).
    """

    module: CliffordModule
    codim: int
    A0: np.ndarray
    A1: tuple[np.ndarray, ...]
    A2: tuple[tuple[np.ndarray, ...], ...] | None = None
    normal_frame: np.ndarray | None = None

    def __post_init__(self):
        m = self.module
        object.__setattr__(self, "A0", _freeze(self.A0))
        object.__setattr__(self, "A1", tuple(_freeze(a) for a in self.A1))
        if self.A2 is not None:
            object.__setattr__(
                self, "A2", tuple(tuple(_freeze(a) for a in row) for row in self.A2)
            )
        frame = self.normal_frame
        if frame is None:
            frame = np.eye(m.n)[: self.codim]
        object.__setattr__(self, "normal_frame", _freeze(frame))
        if not 1 <= self.codim <= m.n:
            raise JetError(f"codim {self.codim} out of range 1..{m.n}")
        if len(self.A1) != self.codim:
            raise JetError("need one first derivative per normal direction")
        if self.normal_frame.shape != (self.codim, m.n):
            raise JetError("normal_frame must be codim x n")

    def symbol_block(self, alpha: int) -> np.ndarray:
        """E0 -> E1 block of c(e^alpha) for the alpha-th normal direction."""
        return self.module.covector_block(self.normal_frame[alpha])

    def validate(self, tol: float = 1e-10) -> dict[str, float]:
        """Concentration condition at jet orders 0/1 plus transversality."""
        m = self.module
        _, v0 = check_concentrating_pair(m, self.A0, tol)
        v1 = max(check_concentrating_pair(m, a, tol)[1] for a in self.A1)
        # transversality: each A1[a] maps ker A0 into ker A0^T
        V0, U1 = _kernel_bases(self.A0, 1e-9)
        vt = 0.0
        if V0.shape[1] and U1.shape[1]:
            proj_out = np.eye(m.dim1) - U1 @ U1.T
            for a in self.A1:
                scale = max(np.abs(a).max(), 1.0)
                vt = max(vt, np.abs(proj_out @ a @ V0).max() / scale)
        out = {"order0": v0, "order1": v1, "transversality": vt}
        if max(out.values()) > tol:
            raise JetError(f"jet violates admissibility: {out}")
        return out


def witten_morse_jet(
    module: CliffordModule,
    hessian: np.ndarray,
    normal_axes: tuple[int, ...] | None = None,
    third: np.ndarray | None = None,
) -> PerturbationJet:
    """Jet of hat(df) at a critical point or critical-submanifold fiber.

    ``hessian`` is the normal Hessian of f (codim x codim, symmetric),
    ``third`` optionally the normal third derivatives f_{abg} with shape
    (codim, codim, n) so that A2[a][b] = sum_g third[a,b,g] hat_g.
    """
    if module.hat_gens is None:
        raise ValueError("module carries no commuting hat action")
    hessian = np.asarray(hessian, dtype=float)
    codim = hessian.shape[0]
    n = module.n
    if normal_axes is None:
        normal_axes = tuple(range(codim))
    frame = np.zeros((codim, n))
    for i, ax in enumerate(normal_axes):
        frame[i, ax] = 1.0
    zero = np.zeros((module.dim1, module.dim0))
    A1 = tuple(
        sum(hessian[a, b] * module.hat_gens[normal_axes[b]] for b in range(codim))
        for a in range(codim)
    )
    A2 = None
    if third is not None:
        third = np.asarray(third, dtype=float)
        A2 = tuple(
            tuple(
                sum(third[a, b, g] * module.hat_gens[g] for g in range(n))
                for b in range(codim)
            )
            for a in range(codim)
        )
    return PerturbationJet(
        module=module, codim=codim, A0=zero, A1=A1, A2=A2, normal_frame=frame
    )


@dataclass(frozen=True)
class StructureReport:
    """Pointwise structure data extracted from an admissible jet.

    Fiber matrices are expressed in the orthonormal kernel bases
    ``S0_basis`` (columns span ker A0) and ``S1_basis`` (ker A0^T); the
    ladder lists (eigenvalue, multiplicity, k, lambda) rungs of C0 + C1.
    """

    kernel_dim: int
    codim: int
    S0_basis: np.ndarray
    S1_basis: np.ndarray
    Chat: tuple[np.ndarray, ...]
    M0: tuple[np.ndarray, ...]
    M1: tuple[np.ndarray, ...]
    Q0: np.ndarray
    Q1: np.ndarray
    C0: np.ndarray
    C1: np.ndarray
    lambdas: np.ndarray
    ladder: tuple[tuple[float, int, int, float], ...]
    Splus0: np.ndarray
    Sminus0: np.ndarray
    Splus1: np.ndarray
    Sminus1: np.ndarray
    compatible: bool
    violations: dict[str, float] = field(default_factory=dict)

    @property
    def dim_splus0(self) -> int:
        return self.Splus0.shape[1]

    @property
    def dim_splus1(self) -> int:
        return self.Splus1.shape[1]

    def min_rate(self) -> float:
        return float(self.lambdas.min())

    def to_json(self) -> str:
        payload = {
            "kernel_dim": self.kernel_dim,
            "codim": self.codim,
            "compatible": self.compatible,
            "lambdas": [float(v) for v in self.lambdas],
            "dim_splus": [self.dim_splus0, self.dim_splus1],
            "ladder": [
                {"eigenvalue": ev, "multiplicity": mult, "k": k, "lambda": lam}
                for ev, mult, k, lam in self.ladder
            ],
            "violations": {k: float(v) for k, v in self.violations.items()},
        }
        return json.dumps(payload, sort_keys=True)


def _kernel_bases(A: np.ndarray, tol_kernel: float) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal bases of ker A and ker A^T via SVD with relative cutoff."""
    A = np.asarray(A, dtype=float)
    U, sig, Vt = np.linalg.svd(A)
    smax = sig[0] if sig.size else 0.0
    cut = tol_kernel * smax if smax > 0 else np.inf
    rank = int(np.sum(sig > cut))
    return Vt[rank:].T.copy(), U[:, rank:].copy()


def analyze_jet(
    jet: PerturbationJet,
    tol_kernel: float = 1e-9,
    tol: float = 1e-8,
    sample_seed: int = 7,
    sample_count: int = 16,
) -> StructureReport:
    """Full pointwise structure analysis of an admissible jet.

    Computes S0 = ker A0 and S1 = ker A0^T, the first-jet endomorphisms
    M_alpha on both, their common square Q (checked on the coordinate axes
    plus a seeded sample of unit normals), C = sum M_alpha, and the labelled
    eigenvalue ladder.  A non-constant M_v^2 is reported in ``violations``
    and flips ``compatible`` rather than aborting; a singular Q or a kernel
    dimension mismatch raises ``JetError``.
    """
    m = jet.module
    c = jet.codim
    V0, U1 = _kernel_bases(jet.A0, tol_kernel)
    d = V0.shape[1]
    if d == 0:
        raise JetError("A0 has trivial kernel: nothing singular at this point")
    if U1.shape[1] != d:
        raise JetError(
            f"kernel dims differ: ker A = {d}, ker A^T = {U1.shape[1]}"
        )

    Chat = tuple(U1.T @ jet.symbol_block(a) @ V0 for a in range(c))
    Ahat = tuple(U1.T @ jet.A1[a] @ V0 for a in range(c))
    M0 = tuple(Chat[a].T @ Ahat[a] for a in range(c))
    M1 = tuple(-U1.T @ jet.symbol_block(a) @ jet.A1[a].T @ U1 for a in range(c))

    violations: dict[str, float] = {}
    violations["m_symmetry"] = max(
        max(np.abs(M - M.T).max() for M in M0),
        max(np.abs(M - M.T).max() for M in M1),
    )

    Q0 = sum(M @ M for M in M0) / c
    Q1 = sum(M @ M for M in M1) / c
    scaleQ = max(np.abs(Q0).max(), 1e-30)
    compat = max(np.abs(M @ M - Q0).max() for M in M0) / scaleQ
    # spot check on random unit normals plus the axes (axes are implicit above)
    rng = np.random.default_rng(sample_seed)
    for _ in range(sample_count):
        v = rng.normal(size=c)
        v /= np.linalg.norm(v)
        Mv = sum(v[a] * Chat[a] for a in range(c)).T @ sum(
            v[a] * Ahat[a] for a in range(c)
        )
        compat = max(compat, np.abs(Mv @ Mv - Q0).max() / scaleQ)
    violations["compatibility"] = compat
    compatible = bool(compat <= 1e-6)

    evQ = np.linalg.eigvalsh(Q0)
    # nondegeneracy must hold in every normal direction, not on average
    worst_dir = min(float(np.linalg.eigvalsh(M @ M).min()) for M in M0)
    if min(evQ.min(), worst_dir) <= tol_kernel * max(evQ.max(), 1e-30):
        raise JetError("Q is singular: normal nondegeneracy fails")
    rates = np.sqrt(np.clip(evQ, 0.0, None))
    keep = [float(rates[0])]
    for v in np.sort(rates)[1:]:
        if v - keep[-1] > tol * max(v, 1.0):
            keep.append(float(v))
    lambdas = np.asarray(keep)

    C0 = sum(M0, start=np.zeros((d, d)))
    C1 = sum(M1, start=np.zeros((d, d)))
    ev0, vec0 = np.linalg.eigh(C0)
    ev1, vec1 = np.linalg.eigh(C1)

    targets = []  # (value, k, lambda)
    for lam in lambdas:
        for k in range(c + 1):
            targets.append(((c - 2 * k) * lam, k, lam))

    def label(ev: float) -> tuple[int, float, float]:
        best = min(targets, key=lambda t: (abs(ev - t[0]), t[1]))
        return best[1], best[2], abs(ev - best[0])

    ladder_map: dict[tuple[float, int, float], int] = {}
    worst_fit = 0.0
    for ev in np.concatenate([ev0, ev1]):
        k, lam, err = label(float(ev))
        worst_fit = max(worst_fit, err)
        key = (round((c - 2 * k) * lam, 10), k, lam)
        ladder_map[key] = ladder_map.get(key, 0) + 1
    violations["ladder_fit"] = worst_fit
    ladder = tuple(
        (val, mult, k, lam)
        for (val, k, lam), mult in sorted(ladder_map.items(), reverse=True)
    )

    # top/bottom rungs as joint eigenspaces of the commuting M family:
    # the intersection over alpha of the positive (negative) eigenspaces.
    # For a compatible jet this is the C eigenspace at +-(codim) lambda,
    # and it stays correct at multi-rate point jets where C alone mixes.
    def joint_eigspace(Ms, sign):
        basis = np.eye(d)
        for M in Ms:
            if basis.shape[1] == 0:
                break
            sub = basis.T @ M @ basis
            evs, vecs = np.linalg.eigh(sub)
            keep = (sign * evs) > tol
            basis = basis @ vecs[:, keep]
        return basis

    Splus0 = joint_eigspace(M0, +1)
    Sminus0 = joint_eigspace(M0, -1)
    Splus1 = joint_eigspace(M1, +1)
    Sminus1 = joint_eigspace(M1, -1)

    return StructureReport(
        kernel_dim=d,
        codim=c,
        S0_basis=V0,
        S1_basis=U1,
        Chat=Chat,
        M0=M0,
        M1=M1,
        Q0=Q0,
        Q1=Q1,
        C0=C0,
        C1=C1,
        lambdas=lambdas,
        ladder=ladder,
        Splus0=Splus0,
        Sminus0=Sminus0,
        Splus1=Splus1,
        Sminus1=Sminus1,
        compatible=compatible,
        violations=violations,
    )


def ladder_multiplicity_table(report: StructureReport) -> list[tuple[float, int, int]]:
    """(eigenvalue, observed multiplicity, expected multiplicity) per rung.

    Expected counts follow the wedge-power decomposition of the combined
    ladder: binom(codim, k) * (dim S0+ + dim S1+) at (codim - 2k) * lambda,
    valid when a single rate lambda is present.
    """
    c = report.codim
    dplus = report.dim_splus0 + report.dim_splus1
    out = []
    for val, mult, k, _lam in report.ladder:
        out.append((val, mult, math.comb(c, k) * dplus))
    return out
