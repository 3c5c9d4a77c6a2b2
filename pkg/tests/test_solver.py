import numpy as np
import pytest
from numpy.testing import assert_allclose

from cabc.dtn import assemble_dense_dtn, ledger_for
from cabc.helmholtz import GridSpec, SystemConfig, assemble_system, factor_solve
from cabc.medium import Medium, MediumKind
from cabc.plr import plr_compress
from cabc.solver import (
    ConventionError,
    DtNRealization,
    DtNVariant,
    InteriorDtNSolver,
    grazing_scan,
    point_source,
    solution_error,
    solve_with_dtn,
)

UNIFORM = Medium(MediumKind.UNIFORM)


def grid_for(n, w=None):
    return GridSpec(
        n=n,
        omega=321.699 * (n / 1023) ** (2 / 3),
        pml_width_w=w or max(8, n // 2),
        strip_gap=2,
    )


@pytest.fixture(scope="module")
def dense_16():
    grid = grid_for(16, w=12)
    dense = assemble_dense_dtn(UNIFORM, grid).data
    return grid, dense


def test_zero_source_gives_zero(dense_16):
    grid, dense = dense_16
    real = DtNRealization.from_dense(dense, ledger_for(UNIFORM))
    sol = solve_with_dtn(UNIFORM, grid, real, np.zeros((grid.n, grid.n)))
    assert np.linalg.norm(sol.u) == 0.0


def test_solution_error_examples(dense_16):
    grid, dense = dense_16
    real = DtNRealization.from_dense(dense, ledger_for(UNIFORM))
    sol = solve_with_dtn(UNIFORM, grid, real, point_source(grid, 0.5, 0.4))
    assert solution_error(sol, sol) == 0.0
    doubled = 2.0 * sol.u
    assert_allclose(solution_error(doubled, sol.u), 1.0, rtol=1e-13)
    ref = sol.u / np.linalg.norm(sol.u)
    pert = np.zeros_like(ref)
    pert[3, 7] = 1.0
    eps = 1e-5
    assert abs(solution_error(ref + eps * pert, ref) - eps) <= 1e-14
    with pytest.raises(ValueError):
        solution_error(np.zeros((4, 4)), np.zeros((4, 4)))


def test_ghost_elimination_equals_full_layer_solve():
    # solving with the dense DtN of width w must equal the interior of the
    # full layered solve with the same w: elimination is exact algebra
    for kind in (MediumKind.UNIFORM, MediumKind.WAVEGUIDE):
        med = Medium(kind)
        grid = grid_for(16, w=12)
        dense = assemble_dense_dtn(med, grid).data
        real = DtNRealization.from_dense(dense, ledger_for(med))
        f = point_source(grid, 0.5, 0.4)
        sol = solve_with_dtn(med, grid, real, f)
        system = assemble_system(med, grid, SystemConfig.INTERIOR)
        geom = system.geometry
        rhs = system.zero_rhs()
        n = grid.n
        for k, (i, j) in enumerate(geom.nodes):
            if 0 <= i < n and 0 <= j < n:
                rhs[k] = f[i, j]
        u_full = factor_solve(system, rhs).values
        core = np.zeros((n, n), dtype=complex)
        for k, (i, j) in enumerate(geom.nodes):
            if 0 <= i < n and 0 <= j < n:
                core[i, j] = u_full[k]
        assert solution_error(sol.u, core) <= 1e-9


def test_border_schur_equals_monolithic_dense(dense_16):
    grid, dense = dense_16
    n, h = grid.n, grid.h
    ledger = ledger_for(UNIFORM)
    real = DtNRealization.from_dense(dense, ledger)
    f = point_source(grid, 0.5, 0.35)
    sol = solve_with_dtn(UNIFORM, grid, real, f)

    # monolithic oracle: assemble the full reduced system densely
    solver = InteriorDtNSolver(UNIFORM, grid, real)
    ni, nb = solver._ni, solver._nb
    a = solver._a.toarray()
    slots = solver._slot_ring
    p_in = np.zeros((4 * n, nb))
    p_in[np.arange(4 * n), slots] = 1.0
    a[ni:, ni:] += (1.0 / h) * (p_in.T @ (dense @ p_in))
    fv = np.asarray(f)[tuple(solver._nodes.T)]
    u = np.linalg.solve(a, fv)
    u_grid = np.zeros((n, n), dtype=complex)
    u_grid[tuple(solver._nodes.T)] = u
    assert solution_error(sol.u, u_grid) <= 1e-10


def test_variant_consistency_dense_vs_full_rank_compressed(dense_16):
    grid, dense = dense_16
    n = grid.n
    ledger = ledger_for(UNIFORM)
    dense_real = DtNRealization.from_dense(dense, ledger)
    payloads = {}
    for e in ledger.entries:
        i, j = e.representative
        block = dense[(i - 1) * n : i * n, (j - 1) * n : j * n]
        payloads[e.representative] = plr_compress(block, r_max=n, epsilon=1e-300)
    comp = DtNRealization(DtNVariant.COMPRESSED, n, ledger, payloads)
    f = point_source(grid, 0.5, 0.4)
    u_dense = solve_with_dtn(UNIFORM, grid, dense_real, f)
    u_comp = solve_with_dtn(UNIFORM, grid, comp, f)
    assert solution_error(u_comp, u_dense) <= 1e-8


def test_realization_apply_matches_dense(dense_16):
    grid, dense = dense_16
    ledger = ledger_for(UNIFORM)
    real = DtNRealization.from_dense(dense, ledger)
    rng = np.random.default_rng(0)
    g = rng.standard_normal(4 * grid.n)
    assert np.linalg.norm(real.apply(g) - dense @ g) <= 1e-10 * np.linalg.norm(dense @ g)


def test_compressed_apply_uses_orientations(dense_16):
    grid, dense = dense_16
    n = grid.n
    ledger = ledger_for(UNIFORM)
    payloads = {}
    for e in ledger.entries:
        i, j = e.representative
        block = dense[(i - 1) * n : i * n, (j - 1) * n : j * n]
        payloads[e.representative] = plr_compress(block, r_max=8, epsilon=1e-9, seed=1)
    comp = DtNRealization(DtNVariant.COMPRESSED, n, ledger, payloads)
    rng = np.random.default_rng(1)
    g = rng.standard_normal(4 * n)
    ref = dense @ g
    assert np.linalg.norm(comp.apply(g) - ref) <= 1e-6 * np.linalg.norm(ref)


def test_convention_mismatch_rejected(dense_16):
    grid, dense = dense_16
    real = DtNRealization.from_dense(dense, ledger_for(UNIFORM))
    other = grid_for(24, w=12)
    with pytest.raises(ConventionError):
        InteriorDtNSolver(UNIFORM, other, real)
    with pytest.raises(ConventionError):
        real.apply(np.zeros(3))


def test_grazing_scan_validations_and_self_consistency(dense_16):
    grid, dense = dense_16
    ledger = ledger_for(UNIFORM)
    real = DtNRealization.from_dense(dense, ledger)
    with pytest.raises(ValueError):
        grazing_scan(UNIFORM, grid, real, [grid.h], reference=real)
    curve = grazing_scan(UNIFORM, grid, real, [0.25, 2 * grid.h], reference=real)
    assert all(err <= 1e-9 for _, err in curve)


def test_point_source_location_and_scale():
    grid = grid_for(16)
    f = point_source(grid, 0.5, 0.25)
    assert f.sum() == pytest.approx(1.0 / grid.h**2)
    i, j = np.argwhere(f != 0)[0]
    x, y = (i + 0.5) * grid.h, (j + 0.5) * grid.h
    assert abs(x - 0.5) <= grid.h / 2 + 1e-12
    assert abs(y - 0.25) <= grid.h / 2 + 1e-12


def test_interior_solution_residual_small(dense_16):
    grid, dense = dense_16
    real = DtNRealization.from_dense(dense, ledger_for(UNIFORM))
    sol = solve_with_dtn(UNIFORM, grid, real, point_source(grid, 0.4, 0.6))
    assert sol.residual <= 1e-9
