"""Staggered differential forms and the deformed Dirac operator on flat tori.

A form component indexed by an axis subset I sits at grid points offset by
half a cell in each direction of I.  Forward differences then realize the
coboundary d with d o d = 0 exactly, and the codifferential is the plain
matrix transpose in the uniform grid inner product
||w||^2 = prod(h_j) * sum |w_I|^2.  The deformation is the pointwise
symmetric action of df (wedge plus contraction) with derivatives evaluated
analytically at the staggered site of each coupling's higher-degree
component, which keeps it exactly local.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .scalar_functions import ScalarFunction
from .sparse_ops import GramOperator

__all__ = [
    "TorusGrid",
    "FormField",
    "CriticalComponent",
    "CriticalReport",
    "assemble_d",
    "assemble_dstar",
    "assemble_witten",
    "assemble_deformed",
    "find_critical_set",
]

MAX_UNKNOWNS = 1 << 22


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on a flat torus of dimension 1..3."""

    n: int
    sizes: tuple[int, ...]
    lengths: tuple[float, ...] | None = None

    def __post_init__(self):
        if not 1 <= self.n <= 3:
            raise ValueError("torus dimension must be 1..3")
        if len(self.sizes) != self.n:
            raise ValueError("need one size per axis")
        if any(sz < 16 for sz in self.sizes):
            raise ValueError("need at least 16 points per axis")
        lengths = self.lengths or tuple(2.0 * math.pi for _ in range(self.n))
        object.__setattr__(self, "lengths", tuple(float(v) for v in lengths))
        if (1 << self.n) * self.npoints > MAX_UNKNOWNS:
            raise ValueError("grid too large")

    @property
    def npoints(self) -> int:
        return int(np.prod(self.sizes))

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(l / s for l, s in zip(self.lengths, self.sizes))

    @property
    def measure(self) -> float:
        return float(np.prod(self.spacings))

    def component_masks(self) -> list[int]:
        masks = list(range(1 << self.n))
        masks.sort(key=lambda m: (bin(m).count("1"), m))
        return masks

    def parity_masks(self, parity: int) -> list[int]:
        return [m for m in self.component_masks() if bin(m).count("1") % 2 == parity]

    def component_points(self, mask: int) -> np.ndarray:
        """Staggered sample points of component I, shape (*sizes, n)."""
        axes = []
        for j in range(self.n):
            h = self.spacings[j]
            off = 0.5 * h if mask & (1 << j) else 0.0
            axes.append(np.arange(self.sizes[j]) * h + off)
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def block_size(self) -> int:
        return self.npoints

    def parity_dim(self, parity: int) -> int:
        return len(self.parity_masks(parity)) * self.npoints

    def norm(self, values: np.ndarray) -> float:
        return math.sqrt(self.measure) * float(np.linalg.norm(values))

    def wrap_distance(self, p: np.ndarray, q: np.ndarray, axes=None) -> float:
        """Torus distance between points, optionally along selected axes."""
        axes = range(self.n) if axes is None else axes
        tot = 0.0
        for j in axes:
            d = abs(p[j] - q[j]) % self.lengths[j]
            tot += min(d, self.lengths[j] - d) ** 2
        return math.sqrt(tot)


@dataclass
class FormField:
    """All 2^n staggered components of a form on a torus grid."""

    grid: TorusGrid
    components: dict[int, np.ndarray]

    @classmethod
    def zero(cls, grid: TorusGrid) -> "FormField":
        return cls(grid, {m: np.zeros(grid.sizes) for m in grid.component_masks()})

    @classmethod
    def from_parity_vector(cls, grid: TorusGrid, parity: int, vec: np.ndarray) -> "FormField":
        comps = {m: np.zeros(grid.sizes) for m in grid.component_masks()}
        npts = grid.npoints
        for i, mask in enumerate(grid.parity_masks(parity)):
            comps[mask] = vec[i * npts:(i + 1) * npts].reshape(grid.sizes).copy()
        return cls(grid, comps)

    def parity_vector(self, parity: int) -> np.ndarray:
        return np.concatenate(
            [self.components[m].ravel() for m in self.grid.parity_masks(parity)]
        )

    def norm(self) -> float:
        total = sum(float(np.sum(c**2)) for c in self.components.values())
        return math.sqrt(self.grid.measure * total)

    def pointwise_density(self) -> np.ndarray:
        """Sum of squared component values per grid multi-index."""
        out = np.zeros(self.grid.sizes)
        for c in self.components.values():
            out += c**2
        return out


def _wedge_sign(mask: int, axis: int) -> int:
    below = mask & ((1 << axis) - 1)
    return -1 if bin(below).count("1") % 2 else 1


def _roll_diff(sizes, axis, h) -> sp.csr_matrix:
    """Periodic forward difference along one axis on the flattened grid."""
    npts = int(np.prod(sizes))
    idx = np.arange(npts).reshape(sizes)
    fwd = np.roll(idx, -1, axis=axis).ravel()
    rows = np.concatenate([np.arange(npts), np.arange(npts)])
    cols = np.concatenate([fwd, np.arange(npts)])
    vals = np.concatenate([np.full(npts, 1.0 / h), np.full(npts, -1.0 / h)])
    return sp.coo_matrix((vals, (rows, cols)), shape=(npts, npts)).tocsr()


def assemble_d(grid: TorusGrid, axes: tuple[int, ...] | None = None) -> sp.csr_matrix:
    """Coboundary on the full complex (all components stacked in mask order).

    ``axes`` restricts the differences to the given directions; the default
    uses all of them.  Restricted assemblies reproduce exactly the matching
    entries of the full one, which the fiberwise balancing solves rely on.
    """
    masks = grid.component_masks()
    pos = {m: i for i, m in enumerate(masks)}
    npts = grid.npoints
    dim = len(masks) * npts
    use_axes = range(grid.n) if axes is None else axes
    blocks: list[tuple[int, int, sp.spmatrix]] = []
    for mask in masks:
        for j in use_axes:
            bit = 1 << j
            if mask & bit:
                continue
            sign = _wedge_sign(mask, j)
            op = sign * _roll_diff(grid.sizes, j, grid.spacings[j])
            blocks.append((pos[mask | bit], pos[mask], op))
    rows, cols, vals = [], [], []
    for bi, bj, op in blocks:
        coo = op.tocoo()
        rows.append(coo.row + bi * npts)
        cols.append(coo.col + bj * npts)
        vals.append(coo.data)
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    ).tocsr()


def assemble_dstar(grid: TorusGrid) -> sp.csr_matrix:
    """Codifferential: exactly the transpose of d in the grid inner product."""
    return assemble_d(grid).T.tocsr()


def assemble_witten(
    grid: TorusGrid, f: ScalarFunction, axes: tuple[int, ...] | None = None
) -> sp.csr_matrix:
    """Symmetric action of df (wedge + contraction) on the full complex.

    Each (I, I+j) coupling is valued analytically at the staggered site of
    the higher-degree component and applied to the mean of the two input
    values adjacent along axis j.  The averaging matches the one-sided
    difference stencil at second order and keeps the first-order symbol
    delta_j + s f_j zero-free at all frequencies for every s*h, which a
    plain pointwise sampling loses once s*h*|df| exceeds 2 (spurious
    near-kernel rings).  The matrix is symmetric by construction.
    """
    if f.n != grid.n:
        raise ValueError("function dimension does not match grid")
    masks = grid.component_masks()
    pos = {m: i for i, m in enumerate(masks)}
    npts = grid.npoints
    dim = len(masks) * npts
    use_axes = range(grid.n) if axes is None else axes
    rows, cols, vals = [], [], []
    base = np.arange(npts).reshape(grid.sizes)
    for mask in masks:
        for j in use_axes:
            bit = 1 << j
            if mask & bit:
                continue
            upper = mask | bit
            coeff = 0.5 * _wedge_sign(mask, j) * f.grad(grid.component_points(upper), j)
            here = base.ravel()
            ahead = np.roll(base, -1, axis=j).ravel()
            cval = coeff.ravel()
            for col_idx in (here, ahead):
                rows.append(pos[upper] * npts + here)
                cols.append(pos[mask] * npts + col_idx)
                vals.append(cval)
                rows.append(pos[mask] * npts + col_idx)
                cols.append(pos[upper] * npts + here)
                vals.append(cval)
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    ).tocsr()


def _parity_slices(grid: TorusGrid):
    masks = grid.component_masks()
    pos = {m: i for i, m in enumerate(masks)}
    npts = grid.npoints
    even_idx = np.concatenate(
        [np.arange(pos[m] * npts, (pos[m] + 1) * npts) for m in grid.parity_masks(0)]
    )
    odd_idx = np.concatenate(
        [np.arange(pos[m] * npts, (pos[m] + 1) * npts) for m in grid.parity_masks(1)]
    )
    return even_idx, odd_idx


def parity_block(grid: TorusGrid, full: sp.spmatrix) -> sp.csr_matrix:
    """Even-to-odd block of an operator on the full complex."""
    even_idx, odd_idx = _parity_slices(grid)
    return full.tocsr()[odd_idx, :][:, even_idx].tocsr()


def assemble_deformed(grid: TorusGrid, f: ScalarFunction, s: float) -> sp.csr_matrix:
    """Even-to-odd block of (d + d^T) + s * (df wedge + contraction)."""
    full = assemble_d(grid)
    full = full + full.T
    if s != 0.0:
        full = full + s * assemble_witten(grid, f)
    return parity_block(grid, full)


def deformed_squares(D: sp.csr_matrix) -> tuple[GramOperator, GramOperator]:
    """(D^T D, D D^T) as implicit symmetric products."""
    return GramOperator(D), GramOperator(D, adjoint_side=True)


# ---------------------------------------------------------------------------
# critical set discovery


@dataclass
class CriticalComponent:
    kind: str  # "point" | "circle" | "unclassified"
    location: np.ndarray  # point coords, or fixed coords with nan on the free axis
    morse_index: int
    normal_rates: np.ndarray  # |nonzero Hessian eigenvalues|, or samples for circles
    euler_characteristic: int
    samples: np.ndarray  # polished points on the component
    circle_axis: int | None = None

    def distance(self, grid: TorusGrid, p: np.ndarray) -> float:
        if self.kind == "circle":
            axes = [j for j in range(grid.n) if j != self.circle_axis]
            return grid.wrap_distance(p, self.location, axes=axes)
        return grid.wrap_distance(p, self.location)

    def min_rate(self) -> float:
        return float(np.min(self.normal_rates))


@dataclass
class CriticalReport:
    components: list[CriticalComponent]
    function: str

    def topological_index(self) -> int:
        return sum((-1) ** c.morse_index * c.euler_characteristic for c in self.components)

    def index_counts(self, n: int) -> list[int]:
        counts = [0] * (n + 1)
        for c in self.components:
            if c.kind == "point":
                counts[c.morse_index] += 1
        return counts

    def min_separation(self, grid: TorusGrid) -> float:
        comps = self.components
        best = math.inf
        for i in range(len(comps)):
            for j in range(i + 1, len(comps)):
                for p in comps[i].samples:
                    best = min(best, comps[j].distance(grid, p))
        return best

    def to_json_dict(self) -> dict:
        return {
            "function": self.function,
            "components": [
                {
                    "kind": c.kind,
                    "location": [None if math.isnan(v) else float(v) for v in c.location],
                    "morse_index": int(c.morse_index),
                    "normal_rates": [float(v) for v in np.atleast_1d(c.normal_rates)],
                    "euler_characteristic": int(c.euler_characteristic),
                    "circle_axis": c.circle_axis,
                }
                for c in self.components
            ],
            "topological_index": self.topological_index(),
        }


def _newton_polish(f: ScalarFunction, p: np.ndarray, lengths, steps: int = 40) -> np.ndarray | None:
    p = p.copy()
    for _ in range(steps):
        g = np.array([float(f.grad(p[None, :], j)[0]) for j in range(f.n)])
        if np.linalg.norm(g) < 1e-13:
            return np.mod(p, lengths)
        H = f.hess_matrix(p)
        try:
            step = np.linalg.pinv(H, rcond=1e-8) @ g
        except np.linalg.LinAlgError:
            return None
        if np.linalg.norm(step) > 1.0:
            step = step / np.linalg.norm(step)
        p = p - step
    g = np.array([float(f.grad(p[None, :], j)[0]) for j in range(f.n)])
    return np.mod(p, lengths) if np.linalg.norm(g) < 1e-10 else None


def find_critical_set(
    grid: TorusGrid, f: ScalarFunction, tol: float = 1e-3, scan_per_axis: int = 96
) -> CriticalReport:
    """Grid scan for |df| small, Newton polish, and component classification.

    Components are classified as points or axis-aligned circles; anything
    else is reported as ``unclassified`` so experiments can refuse it.
    """
    n = grid.n
    lengths = np.array(grid.lengths)
    scan_axes = [np.linspace(0, L, scan_per_axis, endpoint=False) for L in lengths]
    mesh = np.meshgrid(*scan_axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    g2 = np.zeros(pts.shape[0])
    for j in range(n):
        g2 += f.grad(pts, j).ravel() ** 2
    gmax = math.sqrt(float(g2.max())) if g2.max() > 0 else 1.0
    cand = pts[np.sqrt(g2) < tol_scan(tol) * gmax]

    polished = []
    for p in cand:
        q = _newton_polish(f, p, lengths)
        if q is not None:
            polished.append(q)
    if not polished:
        return CriticalReport(components=[], function=f.name)
    polished = np.array(polished)

    link = 1.75 * max(L / scan_per_axis for L in lengths)
    comps_idx = _cluster(grid, polished, link)

    components = []
    for idx in comps_idx:
        sample = polished[idx]
        components.append(_classify(grid, f, sample, link))
    components.sort(key=lambda c: (c.kind, c.morse_index, tuple(np.nan_to_num(c.location))))
    return CriticalReport(components=components, function=f.name)


def tol_scan(tol: float) -> float:
    return max(tol, 1e-12)


def _cluster(grid: TorusGrid, pts: np.ndarray, link: float) -> list[np.ndarray]:
    m = pts.shape[0]
    parent = list(range(m))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(m):
        for j in range(i + 1, m):
            if grid.wrap_distance(pts[i], pts[j]) <= link:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    groups: dict[int, list[int]] = {}
    for i in range(m):
        groups.setdefault(find(i), []).append(i)
    return [np.array(v) for v in groups.values()]


def _classify(grid: TorusGrid, f: ScalarFunction, sample: np.ndarray, link: float) -> CriticalComponent:
    n = grid.n
    lengths = np.array(grid.lengths)
    rep = sample[0]
    spread = np.array([_axis_spread(sample[:, j], lengths[j]) for j in range(n)])
    if np.all(spread <= 2 * link):
        center = _torus_mean(sample, lengths)
        H = f.hess_matrix(center)
        ev = np.linalg.eigvalsh(H)
        q = int(np.sum(ev < 0))
        return CriticalComponent(
            kind="point",
            location=center,
            morse_index=q,
            normal_rates=np.abs(ev),
            euler_characteristic=1,
            samples=center[None, :],
        )
    # axis-aligned circle: exactly one axis spans the period
    wide = [j for j in range(n) if spread[j] > 2 * link]
    if len(wide) == 1 and _covers_period(sample[:, wide[0]], lengths[wide[0]], link):
        axis = wide[0]
        fixed = _torus_mean(np.delete(sample, axis, axis=1), np.delete(lengths, axis))
        location = np.full(n, np.nan)
        others = [j for j in range(n) if j != axis]
        for pos, j in enumerate(others):
            location[j] = fixed[pos]
        # normal Hessian along the circle
        params = np.sort(sample[:, axis])
        rates, q = [], None
        for t in np.linspace(0, lengths[axis], 24, endpoint=False):
            p = location.copy()
            p[axis] = t
            p = np.nan_to_num(p, nan=0.0)
            p[axis] = t
            H = f.hess_matrix(p)
            Hn = H[np.ix_(others, others)]
            ev = np.linalg.eigvalsh(Hn)
            qt = int(np.sum(ev < -1e-9))
            q = qt if q is None else q
            rates.append(np.abs(ev))
        return CriticalComponent(
            kind="circle",
            location=location,
            morse_index=int(q),
            normal_rates=np.array(rates).ravel(),
            euler_characteristic=0,
            samples=sample,
            circle_axis=axis,
        )
    return CriticalComponent(
        kind="unclassified",
        location=rep,
        morse_index=0,
        normal_rates=np.array([0.0]),
        euler_characteristic=0,
        samples=sample,
    )


def _axis_spread(vals: np.ndarray, period: float) -> float:
    """Extent of values on a circle of given period."""
    v = np.sort(np.mod(vals, period))
    if v.size == 1:
        return 0.0
    gaps = np.diff(np.concatenate([v, [v[0] + period]]))
    return period - float(gaps.max())


def _covers_period(vals: np.ndarray, period: float, link: float) -> bool:
    v = np.sort(np.mod(vals, period))
    gaps = np.diff(np.concatenate([v, [v[0] + period]]))
    return bool(gaps.max() <= 2.5 * link)


def _torus_mean(pts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Circular mean per axis."""
    out = np.zeros(pts.shape[1])
    for j in range(pts.shape[1]):
        ang = pts[:, j] * (2 * math.pi / lengths[j])
        mean = math.atan2(np.mean(np.sin(ang)), np.mean(np.cos(ang)))
        out[j] = (mean % (2 * math.pi)) * lengths[j] / (2 * math.pi)
    return out
