"""Staggered form complex, deformation assembly, and critical sets."""

import math

import numpy as np
import pytest
import scipy.sparse as sp

from dirac_localize.clifford_kernel import build_witten_module, check_concentrating_pair
from dirac_localize.scalar_functions import get_function, parse_expression
from dirac_localize.sparse_ops import export_coo_text
from dirac_localize.torus_forms import (
    FormField,
    TorusGrid,
    assemble_d,
    assemble_deformed,
    assemble_dstar,
    assemble_witten,
    find_critical_set,
    parity_block,
)


# -- expression grammar ------------------------------------------------------


def test_parser_precedence_and_functions():
    tree = parse_expression("1 + 2 * 3 ^ 2")
    assert tree.ev({}) == 19.0
    tree = parse_expression("cos(x)^2 + sin(x)^2")
    vals = tree.ev({"x": np.linspace(0, 6, 7)})
    assert np.allclose(vals, 1.0)
    assert parse_expression("-x / 2").ev({"x": 4.0}) == -2.0
    assert abs(parse_expression("cos(pi)").ev({}) + 1.0) < 1e-15


def test_parser_rejections():
    with pytest.raises(ValueError):
        parse_expression("x + ")
    with pytest.raises(ValueError):
        parse_expression("tan(x)")
    with pytest.raises(ValueError):
        parse_expression("x ^ 0.5")
    with pytest.raises(ValueError):
        parse_expression("x @ y")


def test_registry_derivatives_consistent():
    for name in ("cos_x", "cos_x_plus_cos_y", "bott_mixed"):
        f = get_function(name, 2)
        f.validate((2 * math.pi, 2 * math.pi))


def test_nonperiodic_function_rejected():
    f = get_function("x", 1)
    with pytest.raises(ValueError):
        f.validate((2 * math.pi,))


# -- complex structure -------------------------------------------------------


def test_d_on_functions_is_forward_difference():
    grid = TorusGrid(n=1, sizes=(16,))
    d = assemble_d(grid).toarray()
    h = grid.spacings[0]
    block = d[16:32, 0:16]
    expect = (np.roll(np.eye(16), 1, axis=1) - np.eye(16)) / h
    assert np.abs(block - expect).max() == 0.0


@pytest.mark.parametrize("sizes", [(64, 64), (16, 16, 16)])
def test_d_squares_to_zero(sizes):
    grid = TorusGrid(n=len(sizes), sizes=sizes)
    d = assemble_d(grid)
    assert abs(d @ d).max() == 0.0


def test_dstar_is_exact_transpose():
    grid = TorusGrid(n=2, sizes=(16, 16))
    d = assemble_d(grid)
    ds = assemble_dstar(grid)
    assert (d.T != ds).nnz == 0


def test_flat_torus_harmonic_forms():
    grid = TorusGrid(n=2, sizes=(16, 16))
    d = assemble_d(grid)
    D = (d + d.T).toarray()
    evs = np.linalg.eigvalsh(D.T @ D)
    assert int(np.sum(evs < 1e-8)) == 4  # b0 + b1 + b2
    De = parity_block(grid, sp.csr_matrix(D))
    even = np.linalg.eigvalsh((De.T @ De).toarray())
    odd = np.linalg.eigvalsh((De @ De.T).toarray())
    assert int(np.sum(even < 1e-8)) == 2
    assert int(np.sum(odd < 1e-8)) == 2


def test_witten_operator_basics():
    grid = TorusGrid(n=2, sizes=(16, 16))
    zero = assemble_witten(grid, get_function("0 * x + 5", 2))
    assert zero.nnz == 0 or abs(zero).max() == 0.0
    w = assemble_witten(grid, get_function("bott_mixed", 2))
    assert abs(w - w.T).max() == 0.0
    w1 = assemble_witten(grid, get_function("cos(x)", 2))
    w2 = assemble_witten(grid, get_function("cos(x) + 7", 2))
    assert abs(w1 - w2).max() == 0.0


def test_witten_1d_multiplication_values():
    grid = TorusGrid(n=1, sizes=(32,))
    f = get_function("cos_theta", 1)
    w = assemble_witten(grid, f)
    block = w.toarray()[32:, :32]
    # averaged coupling: half of -sin at the midpoint on the two neighbors
    theta_mid = (np.arange(32) + 0.5) * grid.spacings[0]
    row_sums = block.sum(axis=1)
    assert np.allclose(row_sums, -np.sin(theta_mid))


def test_pointwise_symbol_pair_concentrates():
    grid = TorusGrid(n=2, sizes=(32, 32))
    f = get_function("cos_x_plus_cos_y", 2)
    module = build_witten_module(2)
    rng = np.random.default_rng(5)
    for _ in range(10):
        p = rng.uniform(0, 2 * math.pi, size=(1, 2))
        A = sum(
            float(f.grad(p, j)[0]) * module.hat_gens[j] for j in range(2)
        )
        ok, violation = check_concentrating_pair(module, A)
        assert ok, violation


def test_deformed_kernel_and_conjugation():
    grid = TorusGrid(n=1, sizes=(256,))
    f = get_function("cos_theta", 1)
    s = 32.0
    D = assemble_deformed(grid, f, s)
    evs = np.linalg.eigvalsh((D.T @ D).toarray())
    assert evs[0] <= 1e-6 * 2 * s
    odd = np.linalg.eigvalsh((D @ D.T).toarray())
    assert int(np.sum(evs < 1.0)) == int(np.sum(odd < 1.0)) == 1  # index 0


def test_squares_share_nonzero_spectrum():
    grid = TorusGrid(n=2, sizes=(16, 16))
    f = get_function("cos_x_plus_cos_y", 2)
    D = assemble_deformed(grid, f, 4.0)
    even = np.linalg.eigvalsh((D.T @ D).toarray())
    odd = np.linalg.eigvalsh((D @ D.T).toarray())
    assert even.min() > -1e-9 and odd.min() > -1e-9  # PSD
    nz_e = even[even > 1e-8][:40]
    nz_o = odd[odd > 1e-8][:40]
    assert np.allclose(nz_e, nz_o, atol=1e-8, rtol=1e-8)


def test_translation_symmetry_in_flat_direction():
    grid = TorusGrid(n=2, sizes=(16, 16))
    f = get_function("cos_x", 2)
    D = assemble_deformed(grid, f, 8.0)
    # y-translation acting per component on the even/odd stacks
    def shift_matrix(parity):
        npts = grid.npoints
        masks = grid.parity_masks(parity)
        idx = np.arange(npts).reshape(grid.sizes)
        rolled = np.roll(idx, -1, axis=1).ravel()
        rows, cols = [], []
        for b in range(len(masks)):
            rows.append(b * npts + np.arange(npts))
            cols.append(b * npts + rolled)
        return sp.coo_matrix(
            (np.ones(npts * len(masks)),
             (np.concatenate(rows), np.concatenate(cols))),
        ).tocsr()

    Te, To = shift_matrix(0), shift_matrix(1)
    assert abs(To @ D - D @ Te).max() < 1e-12


def test_formfield_roundtrip_and_density():
    grid = TorusGrid(n=2, sizes=(16, 16))
    rng = np.random.default_rng(0)
    vec = rng.normal(size=grid.parity_dim(0))
    field = FormField.from_parity_vector(grid, 0, vec)
    assert np.allclose(field.parity_vector(0), vec)
    assert abs(field.norm() - grid.norm(vec)) < 1e-12
    assert field.pointwise_density().shape == grid.sizes


def test_export_coordinate_text(tmp_path):
    grid = TorusGrid(n=1, sizes=(16,))
    d = assemble_d(grid)
    path = tmp_path / "d.txt"
    export_coo_text(d, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("#")
    assert len(lines) == d.nnz + 1


# -- critical sets -----------------------------------------------------------


def test_critical_points_of_double_cosine():
    grid = TorusGrid(n=2, sizes=(64, 64))
    f = get_function("cos_x_plus_cos_y", 2)
    rep = find_critical_set(grid, f, tol=1e-2)
    kinds = sorted((c.kind, c.morse_index) for c in rep.components)
    assert kinds == [("point", 0), ("point", 1), ("point", 1), ("point", 2)]
    assert rep.topological_index() == 0
    assert rep.index_counts(2) == [1, 2, 1]


def test_critical_circles_of_single_cosine():
    grid = TorusGrid(n=2, sizes=(64, 64))
    f = get_function("cos_x", 2)
    rep = find_critical_set(grid, f, tol=1e-2)
    assert [c.kind for c in rep.components] == ["circle", "circle"]
    # minimum of cos x at x = pi has no descending normal direction
    by_index = {c.morse_index: c for c in rep.components}
    assert abs(by_index[0].location[0] - math.pi) < 1e-8
    assert abs(by_index[1].location[0] - 0.0) < 1e-8
    assert all(c.euler_characteristic == 0 for c in rep.components)
    assert rep.topological_index() == 0


def test_critical_set_of_mixed_function():
    grid = TorusGrid(n=2, sizes=(64, 64))
    f = get_function("bott_mixed", 2)
    rep = find_critical_set(grid, f, tol=1e-2)
    kinds = sorted(c.kind for c in rep.components)
    assert kinds == ["circle", "circle", "point", "point"][1:]
    circle = next(c for c in rep.components if c.kind == "circle")
    assert circle.morse_index == 0 and circle.circle_axis == 1
    rates = circle.normal_rates
    assert rates.min() >= 1.0 - 1e-6 and rates.max() <= 3.0 + 1e-6
    points = sorted(
        (c for c in rep.components if c.kind == "point"),
        key=lambda c: c.morse_index,
    )
    assert [p.morse_index for p in points] == [1, 2]
    assert np.allclose(points[1].location, [math.pi, math.pi / 2], atol=1e-8)
    assert np.allclose(points[0].location, [math.pi, 3 * math.pi / 2], atol=1e-8)
    assert rep.topological_index() == 0


def test_diagonal_circle_reported_unclassified():
    grid = TorusGrid(n=2, sizes=(64, 64))
    f = get_function("cos(x - y)", 2)
    rep = find_critical_set(grid, f, tol=1e-2)
    assert rep.components
    assert any(c.kind == "unclassified" for c in rep.components)


def test_negative_deformation_smoke():
    # a single smoke test: the symmetric registry functions give the same
    # counts when the coupling sign flips (plus and minus bundles swap)
    grid = TorusGrid(n=1, sizes=(128,))
    f = get_function("cos_theta", 1)
    counts = {}
    for s in (24.0, -24.0):
        D = assemble_deformed(grid, f, s)
        evs = np.linalg.eigvalsh((D.T @ D).toarray())
        counts[s] = int(np.sum(evs < 1.0))
    assert counts[24.0] == counts[-24.0] == 1


def test_flat_direction_modes_pair_up():
    # translation symmetry along the critical circles forces the low modes
    # above the kernel to come in even-multiplicity groups
    grid = TorusGrid(n=2, sizes=(32, 32))
    f = get_function("cos_x", 2)
    D = assemble_deformed(grid, f, 16.0)
    evs = np.linalg.eigvalsh((D.T @ D).toarray())[:6]
    assert evs[0] < 1e-6 and evs[1] < 1e-6  # circle kernels
    assert abs(evs[2] - evs[3]) <= 1e-8 * max(evs[3], 1.0)
    assert abs(evs[4] - evs[5]) <= 1e-8 * max(evs[5], 1.0)
