"""The acceptance suite: each criterion is a function returning a verdict.

Criteria run with pinned parameters and tolerances; the CLI subcommands and
the test suite call the same functions, so a green suite and a zero exit
code mean the same thing.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .clifford_kernel import (
    analyze_jet,
    build_witten_module,
    ladder_multiplicity_table,
    witten_morse_jet,
)
from .eigensolve import EigenRequest, gap_split, lowest_eigenpairs
from .localization_lab import (
    ExperimentConfig,
    build_approx_eigensection,
    concentration_profile,
    gap_lemma_check,
    index_experiment,
    induced_component_kernel_dim,
    random_gap_instance,
    spectral_flow,
    splice_residual_slope,
)
from .model_fiber import FiberGrid, assemble_vertical, weitzenbock_residual
from .scalar_functions import get_function
from .torus_forms import FormField, TorusGrid, assemble_deformed, find_critical_set

CRITERIA = [
    "clifford-ladder",
    "oscillator-spectrum",
    "weitzenbock-refinement",
    "s1-witten",
    "t2-morse",
    "t2-morse-bott",
    "concentration-decay",
    "splice-decay",
    "gap-lemma",
    "solver-oracle",
]


@dataclass
class CriterionResult:
    name: str
    passed: bool
    runtime: float
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name} ({self.runtime:.1f}s)"


def _timed(fn):
    def wrapper(*args, **kwargs) -> CriterionResult:
        t0 = time.perf_counter()
        name, passed, details = fn(*args, **kwargs)
        return CriterionResult(name, passed, time.perf_counter() - t0, details)

    return wrapper


@_timed
def criterion_clifford_ladder():
    """Witten modules n in {2,3}, every Morse index: exact ladder counts."""
    ok = True
    details = {}
    for n in (2, 3):
        module = build_witten_module(n)
        for q in range(n + 1):
            hess = np.diag([-1.0] * q + [1.0] * (n - q))
            report = analyze_jet(witten_morse_jet(module, hess))
            table = ladder_multiplicity_table(report)
            exact = all(obs == exp for _, obs, exp in table)
            fit_ok = report.violations["ladder_fit"] < 1e-8
            details[f"n{n}_q{q}"] = {
                "ladder": [[float(v), int(m), int(e)] for v, m, e in table],
                "exact": exact,
                "eigenvalue_fit": float(report.violations["ladder_fit"]),
            }
            ok = ok and exact and fit_ok and report.compatible
    return "clifford-ladder", ok, details


def _oscillator_case(s: float, nf: int = 512):
    module = build_witten_module(1)
    report = analyze_jet(witten_morse_jet(module, np.array([[1.0]])))
    half_width = 8.0 / math.sqrt(s)
    grid = FiberGrid(codim=1, half_width=half_width, points_per_axis=nf)
    op = assemble_vertical(report, grid, s)
    return report, grid, (op.T @ op).tocsr()


@_timed
def criterion_oscillator_spectrum():
    """codim 1, lambda 1, s in {4,16,64}: five lowest match 2 s k to 1%."""
    ok = True
    details = {}
    for s in (4.0, 16.0, 64.0):
        _, grid, gram = _oscillator_case(s)
        res = lowest_eigenpairs(EigenRequest(gram, k=5, tol=1e-10, max_iter=800, seed=2))
        target = np.array([2.0 * s * k for k in range(5)])
        zero_ok = abs(res.eigenvalues[0]) <= 1e-3 * 2 * s
        rel = np.abs(res.eigenvalues[1:] - target[1:]) / target[1:]
        case_ok = bool(zero_ok and np.all(rel <= 0.01) and res.all_converged())
        details[f"s{int(s)}"] = {
            "eigenvalues": [float(v) for v in res.eigenvalues],
            "target": [float(v) for v in target],
            "zero_ok": zero_ok,
            "max_rel_err": float(rel.max()),
            "box_times_sqrt_s": float(grid.half_width * math.sqrt(s)),
        }
        ok = ok and case_ok
    return "oscillator-spectrum", ok, details


@_timed
def criterion_weitzenbock():
    """Residual halves when the fiber grid doubles, codim 1 and 2, s = 4."""
    module1 = build_witten_module(1)
    rep1 = analyze_jet(witten_morse_jet(module1, np.array([[1.0]])))
    module2 = build_witten_module(2)
    rep2 = analyze_jet(witten_morse_jet(module2, np.eye(2)))
    s = 4.0
    ok = True
    details = {}
    for label, rep, pair in (
        ("codim1", rep1, (256, 512)),
        ("codim2", rep2, (128, 256)),
    ):
        coarse = weitzenbock_residual(rep, FiberGrid(rep.codim, 4.0, pair[0]), s)
        fine = weitzenbock_residual(rep, FiberGrid(rep.codim, 4.0, pair[1]), s)
        ratio = coarse / fine
        case_ok = 1.7 <= ratio <= 2.3
        details[label] = {"coarse": coarse, "fine": fine, "ratio": ratio}
        ok = ok and case_ok
    return "weitzenbock-refinement", ok, details


@_timed
def criterion_s1_witten():
    """Circle Witten pair at N=256, s=32: kernel, gap, counts, index."""
    grid = TorusGrid(n=1, sizes=(256,))
    f = get_function("cos_theta", 1)
    s = 32.0
    D = assemble_deformed(grid, f, s)
    g_even = (D.T @ D).tocsr()
    g_odd = (D @ D.T).tocsr()
    res_e = lowest_eigenpairs(EigenRequest(g_even, k=4, tol=1e-12, max_iter=1500, seed=2))
    res_o = lowest_eigenpairs(EigenRequest(g_odd, k=4, tol=1e-12, max_iter=1500, seed=2))
    split_e = gap_split(res_e.eigenvalues, 10.0)
    split_o = gap_split(res_o.eigenvalues, 10.0)
    n0 = split_e[0] if split_e else None
    n1 = split_o[0] if split_o else None
    ok = (
        res_e.eigenvalues[0] <= 1e-6 * 2 * s
        and res_e.eigenvalues[1] >= 1.8 * s
        and n0 == 1
        and n1 == 1
    )
    details = {
        "lam_min": float(res_e.eigenvalues[0]),
        "lam2": float(res_e.eigenvalues[1]),
        "counts": [n0, n1],
        "index": None if n0 is None or n1 is None else n0 - n1,
    }
    return "s1-witten", bool(ok and details["index"] == 0), details


@_timed
def criterion_t2_morse():
    """T^2, cos x + cos y, 64^2, s=32, k=8: clusters, ratio, index."""
    grid = TorusGrid(n=2, sizes=(64, 64))
    f = get_function("cos_x_plus_cos_y", 2)
    critical = find_critical_set(grid, f, tol=1e-2)
    cfg = ExperimentConfig(s_list=(32.0,), k=8, tol=1e-11)
    flow = spectral_flow(grid, f, cfg, critical=critical)
    n0 = flow.counts_even[32.0]
    n1 = flow.counts_odd[32.0]
    ratios = [r.gap_ratio for r in flow.reports if r.gap_ratio is not None]
    per_index = critical.index_counts(2)
    ok = (
        n0 == 2
        and n1 == 2
        and ratios
        and min(ratios) >= 10.0
        and (n0 - n1) == critical.topological_index() == 0
        and per_index == [1, 2, 1]
    )
    details = {
        "counts": [n0, n1],
        "gap_ratio_min": float(min(ratios)) if ratios else None,
        "per_index_counts": per_index,
        "topological": critical.topological_index(),
    }
    return "t2-morse", bool(ok), details


@_timed
def criterion_t2_morse_bott():
    """T^2, cos x, 64^2, s=32: counts match the independent circle kernels."""
    grid = TorusGrid(n=2, sizes=(64, 64))
    f = get_function("cos_x", 2)
    critical = find_critical_set(grid, f, tol=1e-2)
    cfg = ExperimentConfig(s_list=(32.0,), k=8, tol=1e-11)
    flow = spectral_flow(grid, f, cfg, critical=critical)
    n0 = flow.counts_even[32.0]
    n1 = flow.counts_odd[32.0]
    ind0 = sum(induced_component_kernel_dim(grid, f, c, 0) for c in critical.components)
    ind1 = sum(induced_component_kernel_dim(grid, f, c, 1) for c in critical.components)
    ok = n0 == n1 == 2 and ind0 == n0 and ind1 == n1 and (n0 - n1) == 0
    details = {
        "counts": [n0, n1],
        "independent_kernel_dims": [ind0, ind1],
        "components": [(c.kind, c.morse_index) for c in critical.components],
    }
    return "t2-morse-bott", bool(ok), details


@_timed
def criterion_concentration():
    """Outside mass at delta = 0.5 falls at least 4x from s=16 to 64 and the
    log mass is decreasing and concave across {16, 32, 64}."""
    grid = TorusGrid(n=2, sizes=(64, 64))
    f = get_function("cos_x_plus_cos_y", 2)
    critical = find_critical_set(grid, f, tol=1e-2)
    delta = 0.5
    masses = {}
    for s in (16.0, 32.0, 64.0):
        D = assemble_deformed(grid, f, s)
        res = lowest_eigenpairs(
            EigenRequest((D.T @ D).tocsr(), k=2, tol=1e-12, max_iter=2500, seed=3)
        )
        vec = FormField.from_parity_vector(grid, 0, res.eigenvectors[:, 0])
        masses[s] = concentration_profile(vec, critical, [delta])[0][1]
    lm = {s: math.log(m) for s, m in masses.items()}
    slope1 = (lm[32.0] - lm[16.0]) / 16.0
    slope2 = (lm[64.0] - lm[32.0]) / 32.0
    decreasing = masses[16.0] > masses[32.0] > masses[64.0]
    concave = slope2 <= slope1 + 0.05 * abs(slope1)
    factor4 = masses[64.0] <= masses[16.0] / 4.0
    details = {
        "masses": {str(int(s)): float(m) for s, m in masses.items()},
        "slopes": [slope1, slope2],
        "factor4": factor4,
        "decreasing": decreasing,
        "concave": concave,
    }
    return "concentration-decay", bool(factor4 and decreasing and concave), details


@_timed
def criterion_splice_decay():
    """Spliced sections on the mixed function's circle: residual slope and
    strict improvement from the balancing correction."""
    grid = TorusGrid(n=2, sizes=(128, 128))
    f = get_function("bott_mixed", 2)
    critical = find_critical_set(grid, f, tol=1e-2)
    circle = next(c for c in critical.components if c.kind == "circle")
    s_list = (8.0, 16.0, 32.0, 64.0)
    corrected, uncorrected = [], []
    for s in s_list:
        sec = build_approx_eigensection(grid, f, circle, s, 0.8)
        corrected.append(sec.residual)
        uncorrected.append(sec.residual_uncorrected)
    slope = splice_residual_slope(s_list, corrected)
    improved = all(a < b for a, b in zip(corrected, uncorrected))
    ok = slope <= -0.45 and improved
    details = {
        "s": list(s_list),
        "corrected": corrected,
        "uncorrected": uncorrected,
        "slope": slope,
        "improved_everywhere": improved,
    }
    return "splice-decay", bool(ok), details


@_timed
def criterion_gap_lemma():
    """50 seeded 100-dim instances with 4 C1 < C2: projection certified."""
    C1, C2 = 0.5, 40.0
    passed = 0
    worst = 0.0
    for seed in range(50):
        L, V = random_gap_instance(100, 7, C1, C2, seed)
        rep = gap_lemma_check(L, V, C1, C2)
        good = (
            rep.conclusive()
            and rep.projection_invertible
            and rep.defect_norm_sq is not None
            and rep.defect_norm_sq <= rep.bound
        )
        if good:
            passed += 1
            worst = max(worst, rep.defect_norm_sq)
    details = {"passed": passed, "total": 50, "worst_defect": worst, "bound": 4 * C1 / C2}
    return "gap-lemma", passed == 50, details


@_timed
def criterion_solver_oracle():
    """LOBPCG matches the dense oracle to 1e-7 relative on the operators of
    the oscillator and circle-Witten criteria (all at most 4096 unknowns)."""
    ok = True
    details = {}
    cases = []
    for s in (4.0, 16.0, 64.0):
        _, _, gram = _oscillator_case(s)
        cases.append((f"oscillator_s{int(s)}", gram, 5))
    grid = TorusGrid(n=1, sizes=(256,))
    f = get_function("cos_theta", 1)
    D = assemble_deformed(grid, f, 32.0)
    cases.append(("s1_even", (D.T @ D).tocsr(), 4))
    cases.append(("s1_odd", (D @ D.T).tocsr(), 4))
    for label, gram, k in cases:
        it = lowest_eigenpairs(EigenRequest(gram, k=k, tol=1e-10, max_iter=1500, seed=4))
        oracle = lowest_eigenpairs(EigenRequest(gram, k=k, method="dense_oracle"))
        scale = np.maximum(np.abs(oracle.eigenvalues), 1e-8 * oracle.norm_estimate)
        rel = np.abs(it.eigenvalues - oracle.eigenvalues) / scale
        case_ok = bool(np.all(rel <= 1e-7))
        details[label] = {"max_rel": float(rel.max()), "ok": case_ok}
        ok = ok and case_ok
    return "solver-oracle", ok, details


RUNNERS = {
    "clifford-ladder": criterion_clifford_ladder,
    "oscillator-spectrum": criterion_oscillator_spectrum,
    "weitzenbock-refinement": criterion_weitzenbock,
    "s1-witten": criterion_s1_witten,
    "t2-morse": criterion_t2_morse,
    "t2-morse-bott": criterion_t2_morse_bott,
    "concentration-decay": criterion_concentration,
    "splice-decay": criterion_splice_decay,
    "gap-lemma": criterion_gap_lemma,
    "solver-oracle": criterion_solver_oracle,
}


def run_all(names=None, verbose: bool = True) -> list[CriterionResult]:
    results = []
    for name in names or CRITERIA:
        result = RUNNERS[name]()
        if verbose:
            print(result.line(), flush=True)
        results.append(result)
    return results
