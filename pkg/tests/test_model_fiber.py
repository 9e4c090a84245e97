"""Vertical fiber operator: assembly, operator identity, spectra, kernels."""

import math

import numpy as np
import pytest

from dirac_localize.clifford_kernel import analyze_jet, build_witten_module, witten_morse_jet
from dirac_localize.model_fiber import (
    FiberGrid,
    GaussianSection,
    assemble_vertical,
    gaussian_residual,
    oscillator_spectrum,
    weitzenbock_residual,
)


def codim1_report(rate=1.0, sign=1.0):
    m = build_witten_module(1)
    return analyze_jet(witten_morse_jet(m, np.array([[sign * rate]])))


def codim1_circle_report(sign=1.0):
    """Two-dimensional module with a single normal direction (a circle jet)."""
    m = build_witten_module(2)
    return analyze_jet(witten_morse_jet(m, np.array([[sign]]), normal_axes=(0,)))


def test_zero_deformation_is_dirichlet_laplacian():
    rep = codim1_report()
    grid = FiberGrid(codim=1, half_width=4.0, points_per_axis=64)
    op = assemble_vertical(rep, grid, 1e-30)  # vanishing coupling
    lap = (op.T @ op).toarray()
    h = grid.spacing
    expect = (np.diag(2 * np.ones(64)) - np.diag(np.ones(63), 1) - np.diag(np.ones(63), -1)) / h**2
    assert np.abs(lap - expect).max() < 1e-10


def test_adjoint_is_exact_transpose():
    rep = codim1_report()
    grid = FiberGrid(codim=1, half_width=4.0, points_per_axis=128)
    op = assemble_vertical(rep, grid, 8.0)
    rng = np.random.default_rng(0)
    u = rng.normal(size=op.shape[1])
    v = rng.normal(size=op.shape[0])
    assert abs(np.dot(op @ u, v) - np.dot(u, op.T @ v)) < 1e-10


def test_invalid_arguments():
    rep = codim1_report()
    with pytest.raises(ValueError):
        assemble_vertical(rep, FiberGrid(1, 4.0, 64), -1.0)
    with pytest.raises(ValueError):
        FiberGrid(codim=1, half_width=4.0, points_per_axis=8)
    with pytest.raises(ValueError):
        FiberGrid(codim=3, half_width=4.0, points_per_axis=256)


def test_weitzenbock_zero_at_s_zero():
    rep = codim1_report()
    assert weitzenbock_residual(rep, FiberGrid(1, 4.0, 64), 0.0) == 0.0


def test_weitzenbock_first_order_codim1():
    rep = codim1_report()
    coarse = weitzenbock_residual(rep, FiberGrid(1, 4.0, 128), 4.0)
    fine = weitzenbock_residual(rep, FiberGrid(1, 4.0, 256), 4.0)
    assert 1.7 <= coarse / fine <= 2.3


def test_weitzenbock_first_order_codim2():
    m = build_witten_module(2)
    rep = analyze_jet(witten_morse_jet(m, np.eye(2)))
    coarse = weitzenbock_residual(rep, FiberGrid(2, 4.0, 64), 4.0)
    fine = weitzenbock_residual(rep, FiberGrid(2, 4.0, 128), 4.0)
    assert 1.7 <= coarse / fine <= 2.3


def test_oscillator_spectrum_analytic():
    assert oscillator_spectrum(1.0, 1.0, 1, 0, 5) == [
        (0.0, 1), (2.0, 1), (4.0, 1), (6.0, 1), (8.0, 1)
    ]
    two = oscillator_spectrum(1.0, 3.0, 2, 0, 3)
    assert two == [(0.0, 1), (6.0, 2), (12.0, 3)]
    bottom = oscillator_spectrum(2.0, 5.0, 3, 3, 1)
    assert bottom == [(2.0 * 5.0 * 2.0 * 3, 1)]
    with pytest.raises(ValueError):
        oscillator_spectrum(1.0, 1.0, 2, 3, 4)


def test_discrete_spectrum_matches_oscillator():
    rep = codim1_report()
    s = 16.0
    grid = FiberGrid(codim=1, half_width=2.0, points_per_axis=512)
    op = assemble_vertical(rep, grid, s)
    evs = np.linalg.eigvalsh((op.T @ op).toarray())[:3]
    assert evs[0] <= 1e-3 * 2 * s
    assert abs(evs[1] - 2 * s) / (2 * s) < 0.01
    assert abs(evs[2] - 4 * s) / (4 * s) < 0.01


def test_kernel_dimension_matches_plus_space():
    rep = codim1_circle_report()
    assert rep.kernel_dim == 2 and rep.dim_splus0 == 1
    s = 16.0
    # drift-resolved box: s * h * L well below 1
    grid = FiberGrid(codim=1, half_width=2.0, points_per_axis=256)
    op = assemble_vertical(rep, grid, s)
    evs = np.linalg.eigvalsh((op.T @ op).toarray())
    n_kernel = int(np.sum(evs < 0.01 * 2 * s * rep.min_rate()))
    assert n_kernel == rep.dim_splus0


def test_spectral_estimate_above_kernel():
    rep = codim1_circle_report()
    s = 16.0
    grid = FiberGrid(codim=1, half_width=2.0, points_per_axis=256)
    assert s * grid.spacing**2 <= 0.01
    op = assemble_vertical(rep, grid, s)
    evs = np.linalg.eigvalsh((op.T @ op).toarray())
    floor = 2 * s * rep.min_rate()
    above = evs[evs >= 0.01 * floor]
    assert above.min() >= 0.9 * floor


def test_negative_coupling_swaps_plus_for_minus():
    # s < 0 runs are realized by negating the jet; the kernel count then
    # follows the minus bundle
    plus = codim1_circle_report(sign=1.0)
    rep = codim1_circle_report(sign=-1.0)
    assert rep.dim_splus0 == 1  # minus bundle of the original = plus of negated
    # the two plus lines are orthogonal: the swap moves to the other rung
    overlap = np.abs(plus.Splus0.T @ rep.Splus0).max()
    assert overlap < 1e-10
    grid = FiberGrid(codim=1, half_width=2.0, points_per_axis=256)
    op = assemble_vertical(rep, grid, 16.0)
    evs = np.linalg.eigvalsh((op.T @ op).toarray())
    assert int(np.sum(evs < 0.01 * 32.0)) == 1


def test_gaussian_residual_and_normalization():
    rep = codim1_report()
    s = 16.0
    grid = FiberGrid(codim=1, half_width=8.0 / math.sqrt(s), points_per_axis=512)
    out = gaussian_residual(rep, grid, s, rep.Splus0[:, 0])
    assert out.residual <= 0.05 * math.sqrt(2 * s)
    assert out.residual <= out.bound
    # norm convention: squared grid norm approaches pi^{codim/2}
    assert abs(out.norm_ratio - math.sqrt(math.pi)) < 0.01 * math.sqrt(math.pi)


def test_gaussian_residual_growth_at_most_linear():
    rep = codim1_report()
    grid = FiberGrid(codim=1, half_width=2.0, points_per_axis=512)
    r1 = gaussian_residual(rep, grid, 8.0, rep.Splus0[:, 0]).residual
    r2 = gaussian_residual(rep, grid, 32.0, rep.Splus0[:, 0]).residual
    assert r2 / r1 <= 4.4  # s quadrupled with the grid fixed


def test_gaussian_residual_refuses_off_bundle_vectors():
    rep = codim1_circle_report()
    grid = FiberGrid(codim=1, half_width=2.0, points_per_axis=64)
    bad = rep.Sminus0[:, 0]
    with pytest.raises(ValueError):
        gaussian_residual(rep, grid, 8.0, bad)


def test_gaussian_section_values_shape():
    grid = FiberGrid(codim=2, half_width=3.0, points_per_axis=16)
    sec = GaussianSection(lam=1.0, s=4.0, plus_vector=np.array([1.0]))
    vals = sec.values(grid)
    assert vals.shape == (16 * 16,)
    r2 = grid.radius_squared()
    assert np.argmax(vals) == np.argmin(r2)  # peak at the innermost cell
