"""Discretized vertical operator on a Euclidean fiber.

The model operator sum_a c^a (d_a + s x_a M_a) acts on kernel-valued fields
over a truncated fiber R^codim.  Grid values sit at cell centers, forward
differences land on the staggered midpoints, and the coordinate
multiplication is sampled at those same midpoints so the adjoint is exactly
the matrix transpose.  Its square is a discrete harmonic oscillator with
spectrum 2 s lambda (|a| + k) and Gaussian ground states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .clifford_kernel import StructureReport
from .sparse_ops import GramOperator

__all__ = [
    "FiberGrid",
    "GaussianSection",
    "assemble_vertical",
    "weitzenbock_residual",
    "oscillator_spectrum",
    "gaussian_residual",
]

MAX_NODES = 1 << 22


@dataclass(frozen=True)
class FiberGrid:
    """Uniform cell-centered grid on [-L, L]^codim with Dirichlet truncation."""

    codim: int
    half_width: float
    points_per_axis: int

    def __post_init__(self):
        if self.points_per_axis < 16:
            raise ValueError("need at least 16 points per axis")
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        if self.points_per_axis**self.codim > MAX_NODES:
            raise ValueError("grid too large")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.points_per_axis

    @property
    def centers(self) -> np.ndarray:
        h = self.spacing
        return -self.half_width + (np.arange(self.points_per_axis) + 0.5) * h

    @property
    def midpoints(self) -> np.ndarray:
        """Staggered locations matching the forward-difference stencil."""
        return self.centers + 0.5 * self.spacing

    @property
    def nodes(self) -> int:
        return self.points_per_axis**self.codim

    def radius_squared(self) -> np.ndarray:
        """r^2 at cell centers, flattened C-order over the grid axes."""
        axes = np.meshgrid(*([self.centers] * self.codim), indexing="ij")
        return sum(a**2 for a in axes).ravel()

    def norm(self, u: np.ndarray) -> float:
        """Grid L2 norm carrying the cell measure h^codim."""
        return math.sqrt(self.spacing**self.codim) * float(np.linalg.norm(u))


def _forward_difference(nf: int, h: float) -> sp.csr_matrix:
    """Square difference with a Dirichlet right face; transpose pairs exactly."""
    main = -np.ones(nf) / h
    upper = np.ones(nf - 1) / h
    return sp.diags([main, upper], [0, 1], format="csr")


def _face_difference(nf: int, h: float) -> sp.csr_matrix:
    """Cell values to all nf+1 faces, zero beyond the box.

    The square of this block is exactly the 3-point Laplacian with
    Dirichlet ends; it is used on one-axis fibers where the face grid
    stays a single axis.
    """
    rows = np.concatenate([np.arange(nf), np.arange(1, nf + 1)])
    cols = np.concatenate([np.arange(nf), np.arange(nf)])
    vals = np.concatenate([np.full(nf, 1.0 / h), np.full(nf, -1.0 / h)])
    return sp.coo_matrix((vals, (rows, cols)), shape=(nf + 1, nf)).tocsr()


def _face_coordinate(grid: FiberGrid) -> sp.csr_matrix:
    """Coordinate multiplication sampled at the staggered faces, matching
    the stencil of the face difference (value of the cell to the left)."""
    nf, h = grid.points_per_axis, grid.spacing
    faces = -grid.half_width + np.arange(nf + 1) * h
    rows = np.arange(1, nf + 1)
    cols = np.arange(nf)
    return sp.coo_matrix((faces[1:], (rows, cols)), shape=(nf + 1, nf)).tocsr()


def _axis_operator(op1d: sp.spmatrix, axis: int, codim: int, nf: int) -> sp.csr_matrix:
    mats = [sp.identity(nf, format="csr")] * codim
    mats[axis] = op1d.tocsr()
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def assemble_vertical(
    jet_report: StructureReport, grid: FiberGrid, s: float
) -> sp.csr_matrix:
    """Matrix of sum_a c^a (delta_a + s x_a M_a) from kernel fields to
    cokernel fields; layout is node-major with the fiber index fastest."""
    if s <= 0:
        raise ValueError("s must be positive; negate the jet for s < 0 runs")
    return _assemble_vertical_signed(jet_report, grid, s)


def _assemble_vertical_signed(
    jet_report: StructureReport, grid: FiberGrid, s: float
) -> sp.csr_matrix:
    c = jet_report.codim
    if c != grid.codim:
        raise ValueError("grid codim does not match jet report")
    nf, h = grid.points_per_axis, grid.spacing
    if c == 1:
        # one-axis fibers get the full face grid: both boundary faces are
        # present and the squared operator has exact Dirichlet ends
        diff = _face_difference(nf, h)
        stag = _face_coordinate(grid)
        out = sp.kron(diff, jet_report.Chat[0], format="csr")
        out = out + s * sp.kron(stag, jet_report.Chat[0] @ jet_report.M0[0], format="csr")
        return out.tocsr()
    diff = _forward_difference(nf, h)
    stag = sp.diags(grid.midpoints)
    blocks = []
    for a in range(c):
        d_grid = _axis_operator(diff, a, c, nf)
        x_grid = _axis_operator(stag, a, c, nf)
        chat = jet_report.Chat[a]
        blocks.append(sp.kron(d_grid, chat, format="csr"))
        blocks.append(s * sp.kron(x_grid, chat @ jet_report.M0[a], format="csr"))
    out = blocks[0]
    for b in blocks[1:]:
        out = out + b
    return out.tocsr()


def vertical_square(op: sp.csr_matrix) -> GramOperator:
    return GramOperator(op)


def _smooth_probe(grid: FiberGrid, fiber_dim: int, rng: np.random.Generator) -> np.ndarray:
    """Random smooth field vanishing at the box boundary.

    A cubic polynomial with seeded coefficients times the window
    prod (1 - (x/L)^2)^2, tensored with a random unit fiber vector.  Being
    grid-independent it makes refinement ratios clean.
    """
    L = grid.half_width
    axes = np.meshgrid(*([grid.centers] * grid.codim), indexing="ij")
    poly = np.zeros_like(axes[0])
    for _ in range(4):
        coef = rng.normal()
        powers = rng.integers(0, 4, size=grid.codim)
        term = coef * np.ones_like(axes[0])
        for ax, p in zip(axes, powers):
            term = term * (ax / L) ** int(p)
        poly += term
    window = np.ones_like(axes[0])
    for ax in axes:
        window *= (1.0 - (ax / L) ** 2) ** 2
    fiber = rng.normal(size=fiber_dim)
    fiber /= np.linalg.norm(fiber)
    return np.kron((poly * window).ravel(), fiber)


def weitzenbock_residual(
    jet_report: StructureReport,
    grid: FiberGrid,
    s: float,
    probes: int = 20,
    seed: int = 0,
) -> float:
    """Probe estimate of || D_s^T D_s - (-Lap_h + s^2 r^2 Q - s C) ||.

    The discrete Laplacian is the s = 0 square of the same stencil, so the
    defect isolates the potential terms; it decays at first order in the
    spacing on smooth fields.
    """
    op_s = _assemble_vertical_signed(jet_report, grid, s) if s > 0 else _assemble_vertical_zero(jet_report, grid)
    d = jet_report.kernel_dim
    lap_factor = _assemble_vertical_zero(jet_report, grid)
    r2 = sp.kron(sp.diags(grid.radius_squared()), sp.csr_matrix(jet_report.Q0))
    c0 = sp.kron(sp.identity(grid.nodes, format="csr"), sp.csr_matrix(jet_report.C0))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(probes):
        u = _smooth_probe(grid, d, rng)
        model = lap_factor.T @ (lap_factor @ u) + (s * s) * (r2 @ u) - s * (c0 @ u)
        actual = op_s.T @ (op_s @ u)
        worst = max(worst, grid.norm(actual - model) / grid.norm(u))
    return worst


def _assemble_vertical_zero(jet_report: StructureReport, grid: FiberGrid) -> sp.csr_matrix:
    c = jet_report.codim
    nf, h = grid.points_per_axis, grid.spacing
    if c == 1:
        return sp.kron(_face_difference(nf, h), jet_report.Chat[0], format="csr").tocsr()
    diff = _forward_difference(nf, h)
    out = None
    for a in range(c):
        term = sp.kron(_axis_operator(diff, a, c, nf), jet_report.Chat[a], format="csr")
        out = term if out is None else out + term
    return out.tocsr()


def oscillator_spectrum(
    lam: float, s: float, codim: int, k: int, count_m: int
) -> list[tuple[float, int]]:
    """Analytic eigenvalue list {2 s lam (|a| + k)} with multiplicities.

    Multiplicity of |a| = t over nonnegative integer multi-indices is the
    composition count binom(t + codim - 1, codim - 1).
    """
    if lam <= 0 or s <= 0:
        raise ValueError("lam and s must be positive")
    if not 0 <= k <= codim:
        raise ValueError("k must lie in 0..codim")
    out = []
    t = 0
    while len(out) < count_m:
        mult = math.comb(t + codim - 1, codim - 1)
        out.append((2.0 * s * lam * (t + k), mult))
        t += 1
    return out[:count_m]


@dataclass(frozen=True)
class GaussianSection:
    """Normalized fiber ground state (s lam)^{codim/4} exp(-s lam r^2 / 2) xi+."""

    lam: float
    s: float
    plus_vector: np.ndarray

    def profile(self, r2: np.ndarray, codim: int) -> np.ndarray:
        a = self.s * self.lam
        return a ** (0.25 * codim) * np.exp(-0.5 * a * r2)

    def values(self, grid: FiberGrid) -> np.ndarray:
        amp = self.profile(grid.radius_squared(), grid.codim)
        return np.kron(amp, self.plus_vector)


@dataclass(frozen=True)
class GaussianResidual:
    residual: float
    bound: float
    norm_ratio: float


def gaussian_residual(
    jet_report: StructureReport,
    grid: FiberGrid,
    s: float,
    plus_vector: np.ndarray,
    lam: float | None = None,
) -> GaussianResidual:
    """Relative grid residual of the Gaussian kernel section.

    Refuses vectors outside the top rung: the residual contract only holds
    there.  ``bound`` is the first-order stencil error plus the Dirichlet
    truncation tail; ``norm_ratio`` is ||phi xi||^2 / |xi|^2 for the
    pi^{codim/2} normalization check.
    """
    xi = np.asarray(plus_vector, dtype=float)
    P = jet_report.Splus0
    angle = np.linalg.norm(xi - P @ (P.T @ xi)) / max(np.linalg.norm(xi), 1e-300)
    if angle > 1e-8:
        raise ValueError(f"vector is not in the plus eigenbundle (angle {angle:.2e})")
    if lam is None:
        lam = float(jet_report.lambdas.max())
    sec = GaussianSection(lam=lam, s=s, plus_vector=xi / np.linalg.norm(xi))
    u = sec.values(grid)
    op = assemble_vertical(jet_report, grid, s)
    res = grid.norm(op @ u) / grid.norm(u)
    a = s * lam
    tail = math.exp(-0.5 * a * grid.half_width**2)
    bound = 2.0 * grid.spacing * s * lam * math.sqrt(max(grid.codim, 1)) + 10.0 * tail
    return GaussianResidual(residual=res, bound=bound, norm_ratio=grid.norm(u) ** 2)
