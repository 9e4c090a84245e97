"""Localization experiments: profiles, flows, splices, gap certificate."""

import math

import numpy as np
import pytest

from dirac_localize.eigensolve import EigenRequest, lowest_eigenpairs
from dirac_localize.localization_lab import (
    ExperimentConfig,
    GapNotFound,
    build_approx_eigensection,
    concentration_profile,
    gap_lemma_check,
    index_experiment,
    induced_component_kernel_dim,
    random_gap_instance,
    spectral_flow,
    splice_residual_slope,
)
from dirac_localize.scalar_functions import get_function
from dirac_localize.torus_forms import (
    FormField,
    TorusGrid,
    assemble_deformed,
    find_critical_set,
)


def lowest_even_vector(grid, f, s, tol=1e-11):
    D = assemble_deformed(grid, f, s)
    res = lowest_eigenpairs(EigenRequest((D.T @ D).tocsr(), k=2, tol=tol,
                                         max_iter=2000, seed=3))
    return FormField.from_parity_vector(grid, 0, res.eigenvectors[:, 0])


def test_experiment_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(s_list=(4.0, 2.0))
    with pytest.raises(ValueError):
        ExperimentConfig(s_list=(-1.0, 2.0))
    grid = TorusGrid(n=2, sizes=(64, 64))
    f = get_function("cos_x_plus_cos_y", 2)
    crit = find_critical_set(grid, f, tol=1e-2)
    cfg = ExperimentConfig(s_list=(8.0,), epsilon=3.0)
    with pytest.raises(ValueError):
        cfg.check_epsilon(grid, crit)
    ExperimentConfig(s_list=(8.0,), epsilon=0.8).check_epsilon(grid, crit)


def test_concentration_profile_near_zero_radius():
    grid = TorusGrid(n=2, sizes=(32, 32))
    f = get_function("cos_x_plus_cos_y", 2)
    crit = find_critical_set(grid, f, tol=1e-2)
    vec = lowest_even_vector(grid, f, 8.0, tol=1e-9)
    profile = concentration_profile(vec, crit, [0.0, 0.5, 1.0])
    masses = dict(profile)
    assert masses[0.0] > 0.9  # only the cells on the points are excluded
    assert masses[0.0] >= masses[0.5] >= masses[1.0]


def test_concentration_profile_rejects_zero_field():
    grid = TorusGrid(n=2, sizes=(16, 16))
    f = get_function("cos_x_plus_cos_y", 2)
    crit = find_critical_set(grid, f, tol=1e-2)
    with pytest.raises(ValueError):
        concentration_profile(FormField.zero(grid), crit, [0.5])


def test_spectral_flow_counts_on_circle():
    grid = TorusGrid(n=1, sizes=(128,))
    f = get_function("cos_theta", 1)
    crit = find_critical_set(grid, f, tol=1e-2)
    cfg = ExperimentConfig(s_list=(8.0, 16.0), k=4, tol=1e-10)
    flow = spectral_flow(grid, f, cfg, critical=crit)
    assert flow.counts_even == {8.0: 1, 16.0: 1}
    assert flow.counts_odd == {8.0: 1, 16.0: 1}
    assert flow.growth_asserted and flow.growth_ok
    assert flow.cluster_trend_ok


def test_index_experiment_matches_morse_counts():
    grid = TorusGrid(n=2, sizes=(48, 48))
    f = get_function("cos_x_plus_cos_y", 2)
    crit = find_critical_set(grid, f, tol=1e-2)
    cfg = ExperimentConfig(s_list=(16.0, 24.0), k=8, tol=1e-10)
    res = index_experiment(grid, f, crit, cfg)
    assert res.match and res.index_numeric == 0
    assert res.counts == (2, 2)
    assert res.per_index_counts == [1, 2, 1]


def test_index_experiment_inconclusive_below_threshold():
    grid = TorusGrid(n=2, sizes=(32, 32))
    f = get_function("cos_x_plus_cos_y", 2)
    crit = find_critical_set(grid, f, tol=1e-2)
    cfg = ExperimentConfig(s_list=(4.0,), k=6, tol=1e-9,
                           min_gap_ratio=1e15, s_threshold=8.0)
    with pytest.raises(GapNotFound):
        index_experiment(grid, f, crit, cfg)


def test_induced_kernels_count_cohomology_of_circles():
    grid = TorusGrid(n=2, sizes=(64, 64))
    f = get_function("cos_x", 2)
    crit = find_critical_set(grid, f, tol=1e-2)
    dims0 = [induced_component_kernel_dim(grid, f, c, 0) for c in crit.components]
    dims1 = [induced_component_kernel_dim(grid, f, c, 1) for c in crit.components]
    assert dims0 == [1, 1] and dims1 == [1, 1]


def test_induced_kernels_mixed_components():
    grid = TorusGrid(n=2, sizes=(64, 64))
    f = get_function("bott_mixed", 2)
    crit = find_critical_set(grid, f, tol=1e-2)
    total0 = sum(induced_component_kernel_dim(grid, f, c, 0) for c in crit.components)
    total1 = sum(induced_component_kernel_dim(grid, f, c, 1) for c in crit.components)
    assert (total0, total1) == (2, 2)


def test_circle_section_matches_closed_form():
    # the induced circle operator's kernel follows the quarter-power law
    # coming from the second-jet overlap term
    from dirac_localize.localization_lab import circle_kernel_section

    grid = TorusGrid(n=2, sizes=(96, 96))
    f = get_function("bott_mixed", 2)
    crit = find_critical_set(grid, f, tol=1e-2)
    circle = next(c for c in crit.components if c.kind == "circle")
    u, _ = circle_kernel_section(grid, f, circle)
    t = np.arange(96) * 2 * math.pi / 96
    exact = (2 + np.sin(t)) ** (-0.25)
    exact /= np.linalg.norm(exact)
    assert np.abs(np.abs(u[:, 0]) - exact).max() < 1e-4


def test_hermite_weight_is_orthogonal_to_gaussian():
    # the polar factor behind the first balancing source integrates to zero
    # against the squared ground state
    s, lam = 16.0, 1.5
    r = np.linspace(-6 / math.sqrt(s * lam), 6 / math.sqrt(s * lam), 4001)
    w = (0.5 - s * lam * r**2) * np.exp(-s * lam * r**2)
    integral = np.trapezoid(w, r) / np.trapezoid(np.exp(-s * lam * r**2), r)
    assert abs(integral) < 1e-10


def test_splice_improves_and_stays_in_complement():
    grid = TorusGrid(n=2, sizes=(96, 96))
    f = get_function("bott_mixed", 2)
    crit = find_critical_set(grid, f, tol=1e-2)
    circle = next(c for c in crit.components if c.kind == "circle")
    sec = build_approx_eigensection(grid, f, circle, 16.0, 0.8)
    assert sec.xi1_norm_ratio > 0.0
    assert sec.residual < sec.residual_uncorrected
    assert sec.kernel_angle <= 1e-6
    assert sec.xi2.norm() == 0.0
    assert sec.fiber_condition < 1e10


def test_splice_flat_rate_circle_residual_is_tail_dominated():
    # constant normal rate: the leading source vanishes and the corrected
    # residual sits at the cutoff-tail scale
    grid = TorusGrid(n=2, sizes=(128, 128))
    f = get_function("cos_x", 2)
    crit = find_critical_set(grid, f, tol=1e-2)
    circle = next(c for c in crit.components if c.morse_index == 0)
    s = 32.0
    sec = build_approx_eigensection(grid, f, circle, s, 0.8)
    assert sec.xi1_norm_ratio <= 1e-3
    assert sec.residual <= 1e-4 * math.sqrt(s)


def test_splice_correction_bound_scaled_by_sqrt_s():
    grid = TorusGrid(n=2, sizes=(96, 96))
    f = get_function("bott_mixed", 2)
    crit = find_critical_set(grid, f, tol=1e-2)
    circle = next(c for c in crit.components if c.kind == "circle")
    worst = 0.0
    for s in (8.0, 16.0, 32.0):
        sec = build_approx_eigensection(grid, f, circle, s, 0.8)
        worst = max(worst, sec.xi1_norm_ratio * math.sqrt(s))
    assert worst <= 0.05  # the square-root bound holds with a small constant


def test_slope_fit_requires_three_points():
    with pytest.raises(ValueError):
        splice_residual_slope((8.0, 16.0), (0.1, 0.05))
    with pytest.raises(ValueError):
        splice_residual_slope((8.0, 16.0, 32.0), (0.1, 0.05))
    slope = splice_residual_slope((1.0, 2.0, 4.0), (1.0, 0.5, 0.25))
    assert abs(slope + 1.0) < 1e-12


def test_gap_lemma_block_diagonal_case():
    L = np.diag([0.1, 0.1, 10.0, 10.0])
    V = np.eye(4)[:, :2]
    rep = gap_lemma_check(L, V, 0.01, 100.0)
    assert rep.conclusive() and rep.projection_invertible
    assert rep.defect_norm_sq <= rep.bound == pytest.approx(4e-4)


def test_gap_lemma_inconclusive_side_condition():
    L = np.diag([1.0, 1.0, 3.0, 3.0])
    V = np.eye(4)[:, :2]
    rep = gap_lemma_check(L, V, 3.0, 9.0)  # 4 C1 >= C2
    assert rep.hypotheses_ok and rep.bracket_ok
    assert not rep.four_c1_lt_c2
    assert "inconclusive" in rep.message
    assert rep.projection_invertible is None


def test_gap_lemma_rejects_bad_hypotheses():
    L = np.diag([5.0, 0.1, 10.0, 10.0])
    V = np.eye(4)[:, :2]
    rep = gap_lemma_check(L, V, 0.01, 100.0)
    assert not rep.hypotheses_ok
    assert "hypotheses fail" in rep.message


def test_gap_lemma_requires_orthonormal_v():
    with pytest.raises(ValueError):
        gap_lemma_check(np.eye(3), np.ones((3, 2)), 0.1, 10.0)


@pytest.mark.parametrize("seed", range(10))
def test_random_gap_instances_certify(seed):
    L, V = random_gap_instance(60, 5, 0.5, 40.0, seed)
    rep = gap_lemma_check(L, V, 0.5, 40.0)
    assert rep.conclusive() and rep.projection_invertible
    assert rep.defect_norm_sq <= rep.bound
    assert rep.defect_norm_sq > 0.0  # nontrivial rotation, not the identity


def test_spliced_section_supported_in_tube():
    grid = TorusGrid(n=2, sizes=(64, 64))
    f = get_function("cos_x", 2)
    crit = find_critical_set(grid, f, tol=1e-2)
    circle = next(c for c in crit.components if c.morse_index == 0)
    eps = 0.7
    sec = build_approx_eigensection(grid, f, circle, 16.0, eps)
    for mask, comp in sec.eta.components.items():
        pts = grid.component_points(mask).reshape(-1, 2)
        dist = np.array([circle.distance(grid, p) for p in pts]).reshape(grid.sizes)
        assert np.abs(comp[dist > 2 * eps]).max() == 0.0


def test_index_experiment_refuses_unclassified_components():
    grid = TorusGrid(n=2, sizes=(48, 48))
    f = get_function("cos(x - y)", 2)
    crit = find_critical_set(grid, f, tol=1e-2)
    cfg = ExperimentConfig(s_list=(16.0,), k=6, tol=1e-9)
    with pytest.raises(ValueError, match="unclassified"):
        index_experiment(grid, f, crit, cfg)
