import numpy as np
import pytest
from numpy.testing import assert_allclose

from cabc.dtn import boundary_slots
from cabc.helmholtz import GridSpec
from cabc.medium import Medium, MediumKind
from cabc.probing import (
    BasisSpec,
    DegenerateBasisError,
    approximation_errors,
    build_basis,
    condition_numbers,
    default_block_spec,
    exponent_pairs,
    orthonormalize,
    probe_block,
    probing_errors,
)
from cabc.rng import substream

UNIFORM = Medium(MediumKind.UNIFORM)


def grid_for(n):
    return GridSpec(n=n, omega=321.699 * (n / 1023) ** (2 / 3), pml_width_w=max(8, n // 2))


def test_exponent_pairs_triangular_order():
    pairs = exponent_pairs(8)
    weights = [a + 2 * b for a, b in pairs]
    assert weights == sorted(weights)
    assert pairs[0] == (0, 0)
    assert set(pairs[:3]) == {(0, 0), (1, 0), (2, 0)} or pairs[1] == (1, 0)


def test_basis_entry_values_diagonal():
    n = 16
    grid = grid_for(n)
    spec = BasisSpec(exponent_pairs=((0, 0),), phase_kinds=("+T1",))
    basis = build_basis(spec, UNIFORM, grid, (1, 1))
    # j = (0, 0): all entries unit amplitude, diagonal entry exactly 1
    assert_allclose(np.abs(basis.matrices[0]), 1.0, atol=1e-14)
    assert_allclose(np.diag(basis.matrices[0]), 1.0, atol=1e-14)

    spec2 = BasisSpec(exponent_pairs=((2, 0),), phase_kinds=("+T1",))
    b2 = build_basis(spec2, UNIFORM, grid, (1, 1))
    # amplitude at |x - y| = h is (h + h)^{-j1/alpha} = 1/(2h)
    off = np.abs(b2.matrices[0][3, 4])
    assert_allclose(off, 1.0 / (2 * grid.h), rtol=1e-13)


def test_halfspace_family_form():
    # on one edge of the uniform medium the family reduces to the
    # half-space form exp(i k h |l - m|) / (h + h |l - m|)^(j / alpha)
    n = 16
    grid = grid_for(n)
    spec = BasisSpec(exponent_pairs=((3, 0),), phase_kinds=("+T1",))
    basis = build_basis(spec, UNIFORM, grid, (1, 1))
    l, m = np.arange(n)[:, None], np.arange(n)[None, :]
    h = grid.h
    expected = np.exp(1j * grid.omega * h * np.abs(l - m)) / (h + h * np.abs(l - m)) ** (3 / 2.0)
    assert_allclose(basis.matrices[0], expected, rtol=1e-12)


def test_basis_spec_validation():
    with pytest.raises(ValueError):
        BasisSpec(exponent_pairs=((2, 1), (0, 0)))  # wrong triangular order
    with pytest.raises(ValueError):
        BasisSpec(phase_kinds=("+T9",))
    with pytest.raises(ValueError):
        BasisSpec(bounce_pairs=((0, 0),), phase_kinds=("+T1",))


def test_orthonormalize_identity_family():
    n = 8
    rng = np.random.default_rng(0)
    mats = []
    for j in range(3):
        m = np.zeros((n, n), dtype=complex)
        m[j, j] = 1.0
        mats.append(m)
    from cabc.probing import BasisSet

    raw = BasisSet(np.array(mats), False, np.nan, BasisSpec(), (1, 1), ("a", "b", "c"))
    ortho = orthonormalize(raw)
    assert ortho.p == 3
    assert abs(ortho.gram_condition - 1.0) <= 1e-10
    # unchanged up to sign/phase
    for j in range(3):
        overlap = abs(np.vdot(ortho.matrices[j], raw.matrices[j]))
        assert_allclose(overlap, 1.0, atol=1e-12)


def test_orthonormalize_drops_duplicates():
    n = 8
    rng = np.random.default_rng(1)
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    b = rng.standard_normal((n, n))
    from cabc.probing import BasisSet

    raw = BasisSet(np.array([a, a, b]), False, np.nan, BasisSpec(), (1, 1), ("a", "a2", "b"))
    with pytest.warns(UserWarning):
        ortho = orthonormalize(raw)
    assert ortho.p == 2


def test_orthonormalize_degenerate_family_raises():
    n = 8
    a = np.ones((n, n), dtype=complex)
    from cabc.probing import BasisSet

    raw = BasisSet(np.array([a, a, a, a]), False, np.nan, BasisSpec(), (1, 1), ())
    with pytest.warns(UserWarning):
        with pytest.raises(DegenerateBasisError):
            orthonormalize(raw)


def _ortho_family(n, p, seed=2):
    grid = grid_for(n)
    spec = default_block_spec((1, 1), p=p, two_traveltimes=False)
    return grid, orthonormalize(build_basis(spec, UNIFORM, grid, (1, 1)))


def test_probe_exact_member_of_span():
    n = 16
    _, basis = _ortho_family(n, 6)
    m = basis.matrices[0]
    res = probe_block(lambda z: m @ z, basis, q=1, rng=substream(4, "p1"))
    expected = np.zeros(basis.p, dtype=complex)
    expected[0] = 1.0
    assert_allclose(res.coefficients, expected, atol=1e-10)


def test_probe_linearity():
    n = 16
    _, basis = _ortho_family(n, 6)
    m = 2.0 * basis.matrices[0] + 3.0j * basis.matrices[1]
    res = probe_block(lambda z: m @ z, basis, q=1, rng=substream(4, "p2"))
    expected = np.zeros(basis.p, dtype=complex)
    expected[0] = 2.0
    expected[1] = 3.0j
    assert_allclose(res.coefficients, expected, atol=1e-10)


def test_probe_requires_orthonormal_and_enough_rows():
    n = 16
    grid = grid_for(n)
    spec = default_block_spec((1, 1), p=4, two_traveltimes=False)
    raw = build_basis(spec, UNIFORM, grid, (1, 1))
    with pytest.raises(ValueError):
        probe_block(lambda z: z, raw, q=1, rng=substream(0, "x"))


def test_probe_rank_deficient_psi_signaled():
    n = 16
    _, basis = _ortho_family(n, 4)
    crippled = np.array(basis.matrices)
    crippled[2] = 0.0
    from cabc.probing import BasisSet

    bad = BasisSet(crippled, True, 1.0, basis.spec, (1, 1), basis.labels)
    with pytest.raises(np.linalg.LinAlgError):
        probe_block(lambda z: z, bad, q=1, rng=substream(1, "rd"))


def test_condition_number_examples():
    n = 16
    from cabc.probing import BasisSet

    eye = np.eye(n) / np.sqrt(n)
    basis = BasisSet(np.array([eye]), True, 1.0, BasisSpec(), (1, 1), ("id",))
    lam, kappa, _ = condition_numbers(basis)
    assert_allclose(lam, 1.0, rtol=1e-5)
    u = np.zeros(n)
    u[3] = 1.0
    rank1 = BasisSet(np.array([np.outer(u, u)]), True, 1.0, BasisSpec(), (1, 1), ("uu",))
    lam1, _, _ = condition_numbers(rank1)
    assert_allclose(lam1, 4.0, rtol=1e-5)  # sqrt(16)


def test_kappa_is_one_after_orthonormalization():
    _, basis = _ortho_family(24, 10)
    lam, kappa, _ = condition_numbers(basis)
    assert abs(kappa - 1.0) <= 1e-9


def test_probing_error_definitions():
    n = 16
    _, basis = _ortho_family(n, 6)
    m = basis.matrices[0] + 0.5 * basis.matrices[2]
    res = probe_block(lambda z: m @ z, basis, q=2, rng=substream(5, "pe"))
    norm_d = 10.0
    out = probing_errors(res, multiplicity=4, norm_d=norm_d, m_ref=m)
    assert out["probing_error"] <= 1e-10
    zero = probe_block(lambda z: np.zeros(n, dtype=complex), basis, q=2, rng=substream(5, "pz"))
    out0 = probing_errors(zero, multiplicity=1, norm_d=np.linalg.norm(m), m_ref=m)
    assert_allclose(out0["probing_error"], 1.0, rtol=1e-12)


def test_probing_error_randomized_estimate_close_to_dense():
    n = 16
    grid, basis = _ortho_family(n, 8)
    rng = np.random.default_rng(7)
    m = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    res = probe_block(lambda z: m @ z, basis, q=3, rng=substream(6, "r"), seed_labels=("rec",))
    held_rng = substream(6, "held")
    held = [(z, m @ z) for z in (held_rng.standard_normal(n) for _ in range(15))]
    out = probing_errors(res, 1, np.linalg.norm(m), m_ref=m, heldout=held, heldout_labels=("chk",))
    dense, est = out["probing_error"], out["probing_error_estimate"]
    assert dense / 2 <= est <= dense * 2


def test_probing_error_seed_reuse_rejected():
    n = 16
    _, basis = _ortho_family(n, 6)
    m = basis.matrices[0]
    res = probe_block(lambda z: m @ z, basis, q=1, rng=substream(8, "s"), seed_labels=("lbl",))
    with pytest.raises(ValueError):
        probing_errors(res, 1, 1.0, heldout=[(np.zeros(n), np.zeros(n))], heldout_labels=("lbl",))


def test_monotone_approximation_and_probing_floor():
    n = 32
    grid = grid_for(n)
    from cabc.dtn import ExteriorDtN, block_of

    ext = ExteriorDtN(UNIFORM, grid)
    dense = ext.dense()
    m = block_of(dense, 1, 1)
    norm_d = np.linalg.norm(dense)
    spec = default_block_spec((1, 1), p=16, two_traveltimes=True)
    basis = orthonormalize(build_basis(spec, UNIFORM, grid, (1, 1)))
    errs = approximation_errors(m, basis, 4, norm_d, list(range(1, basis.p + 1)))
    assert np.all(np.diff(errs) <= 1e-12)  # monotone in p
    res = probe_block(lambda z: m @ z, basis, q=3, rng=substream(11, "q"))
    probing = probing_errors(res, 4, norm_d, m_ref=m)["probing_error"]
    assert probing >= errs[-1] - 1e-12  # projection optimality


def test_q_improves_conditioning():
    n = 32
    _, basis = _ortho_family(n, 12)
    medians = []
    for q in (1, 3, 5, 10):
        conds = []
        for trial in range(10):
            rng = substream(100 + trial, "qscan", q)
            zs = rng.standard_normal((n, q))
            from cabc.probing import _stack_psi

            psi = _stack_psi(basis, zs)
            conds.append(np.linalg.cond(psi))
        medians.append(np.median(conds))
    assert np.all(np.diff(medians) <= 1e-12)


def test_triangular_ordering_permutation_invariance():
    n = 16
    grid = grid_for(n)
    pairs = exponent_pairs(5)
    spec_a = BasisSpec(exponent_pairs=tuple(pairs), phase_kinds=("+T1",))
    # permute pairs of equal weight: (2,0) and (0,1) both have weight 2
    permuted = list(pairs)
    i2, i01 = permuted.index((2, 0)), permuted.index((0, 1))
    permuted[i2], permuted[i01] = permuted[i01], permuted[i2]
    spec_b = BasisSpec(exponent_pairs=tuple(permuted), phase_kinds=("+T1",))
    rng_m = np.random.default_rng(3)
    m = rng_m.standard_normal((n, n)) + 1j * rng_m.standard_normal((n, n))
    outs = []
    for spec in (spec_a, spec_b):
        basis = orthonormalize(build_basis(spec, UNIFORM, grid, (1, 1)))
        res = probe_block(lambda z: m @ z, basis, q=2, rng=substream(12, "perm"))
        outs.append(res.reconstruct())
    assert np.linalg.norm(outs[0] - outs[1]) <= 1e-10 * np.linalg.norm(outs[0])


def test_default_specs_by_block_distance():
    d = default_block_spec((1, 1), p=40, two_traveltimes=True)
    assert d.p == 40 and set(d.phase_kinds) == {"+T1", "-T1", "+T2", "-T2"}
    a = default_block_spec((2, 1), p=12)
    assert a.phase_kinds == ("+T1",) and a.second_factor == "Polynomial"
    o = default_block_spec((3, 1), p=1)
    assert o.phase_kinds == ("const",)
    per = default_block_spec((1, 1), p=6, periodic=True)
    assert per.diagonal_family == "PolynomialBothDirections"


def test_periodic_polynomial_family_builds():
    n = 16
    grid = grid_for(n)
    spec = default_block_spec((1, 1), p=6, periodic=True)
    basis = build_basis(spec, Medium(MediumKind.PERIODIC), grid, (1, 1))
    assert basis.p == 6
    assert_allclose(basis.matrices[0], np.ones((n, n)), atol=0)
    ortho = orthonormalize(basis)
    assert abs(ortho.gram_condition - 1.0) <= 1e-9


def test_lambda_stays_small_for_edge_family():
    n = 64
    grid = grid_for(n)
    spec = default_block_spec((1, 1), p=20, two_traveltimes=False)
    basis = orthonormalize(build_basis(spec, UNIFORM, grid, (1, 1)))
    lam, kappa, _ = condition_numbers(basis)
    assert lam <= 30.0
    assert abs(kappa - 1.0) <= 1e-9


def test_single_probe_recovery_tracks_approximation():
    # q = 1 recovery lands within a small factor of the best possible
    # (projection) error for the same family; the absolute level at desk
    # scale is set by the approximation error itself
    n = 64
    grid = grid_for(n)
    from cabc.dtn import ExteriorDtN, block_of

    ext = ExteriorDtN(UNIFORM, grid)
    dense = ext.dense()
    m = block_of(dense, 1, 1)
    norm_d = np.linalg.norm(dense)
    spec = default_block_spec((1, 1), p=12, two_traveltimes=False)
    basis = orthonormalize(build_basis(spec, UNIFORM, grid, (1, 1)))
    app = approximation_errors(m, basis, 4, norm_d, [basis.p])[0]
    ratios = []
    for trial in range(5):
        res = probe_block(lambda z: m @ z, basis, q=1, rng=substream(trial, "q1"))
        perr = probing_errors(res, 4, norm_d, m_ref=m)["probing_error"]
        ratios.append(perr / app)
    assert np.median(ratios) <= 3.0


def test_p_for_fixed_error_grows_weakly_with_n():
    # the family size needed for a fixed target barely grows as the grid
    # and frequency scale together (pollution-consistent refinement)
    from cabc.dtn import ExteriorDtN, block_of

    target = 1e-1
    needed = {}
    for n in (16, 32, 64):
        grid = grid_for(n)
        ext = ExteriorDtN(UNIFORM, grid)
        dense = ext.dense()
        m = block_of(dense, 1, 1)
        norm_d = np.linalg.norm(dense)
        spec = default_block_spec((1, 1), p=40, two_traveltimes=False)
        basis = orthonormalize(build_basis(spec, UNIFORM, grid, (1, 1)))
        errs = approximation_errors(m, basis, 4, norm_d, list(range(1, basis.p + 1)))
        needed[n] = int(np.argmax(errs <= target)) + 1
    assert needed[64] <= 2 * needed[16]
    assert needed[64] <= 24


def test_adjacent_block_corner_distance():
    n = 16
    grid = grid_for(n)
    spec = BasisSpec(exponent_pairs=((2, 0),), phase_kinds=("+T1",), second_factor="Polynomial", theta_kind="None")
    basis = build_basis(spec, UNIFORM, grid, (2, 1))
    slots = boundary_slots(n)
    # row side 2 near the shared corner (1, 0): stored index 0 has t = h/2;
    # col side 1 near the same corner: stored index n - 1
    h = grid.h
    val = basis.matrices[0][0, n - 1]
    d = (0.5 * h) + (0.5 * h)
    assert_allclose(abs(val), (h + d) ** (-1.0), rtol=1e-12)
