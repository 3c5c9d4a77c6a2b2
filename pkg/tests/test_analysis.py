import numpy as np
import pytest
from numpy.testing import assert_allclose

from cabc.analysis import (
    ChebFitResult,
    cheb_fit_error,
    gauss_legendre,
    halfspace_kernel,
    hankel_h1,
    offdiag_rank_scan,
    sample_kernel_matrix,
    separable_inv_kr,
    smooth_kernel_factor,
)

# frozen from the independent 50-digit ascending-series oracle (tests/oracles.py)
ORACLE_H1 = {
    0.5: 0.2422684576748739 - 1.471472392670243j,
    1.0: 0.4400505857449335 - 0.7812128213002887j,
    5.0: -0.32757913759146523 + 0.14786314339122683j,
    12.0: -0.2234471044906276 - 0.05709921826089652j,
}


def test_hankel_matches_series_oracle():
    for z, ref in ORACLE_H1.items():
        assert abs(hankel_h1(z) - ref) <= 1e-10 * abs(ref)


def test_hankel_wronskian_identity():
    from scipy.special import jv, jvp, yv, yvp

    for z in (0.5, 5.0, 50.0):
        w = jv(1, z) * yvp(1, z) - jvp(1, z) * yv(1, z)
        assert abs(w - 2.0 / (np.pi * z)) <= 1e-9


def test_hankel_asymptotic_amplitude():
    z = 1e4
    assert abs(abs(hankel_h1(z)) * np.sqrt(z) - np.sqrt(2.0 / np.pi)) <= 1e-3


def test_hankel_domain_error():
    with pytest.raises(ValueError):
        hankel_h1(0.0)
    with pytest.raises(ValueError):
        hankel_h1(-1.0)


def test_halfspace_kernel_value_from_oracle():
    # K(1, 1) = (i/2) H_1(1)
    ref = 0.5j * ORACLE_H1[1.0]
    assert abs(halfspace_kernel(1.0, 1.0) - ref) <= 1e-12 * abs(ref)
    assert_allclose(ref, 0.39060641065 + 0.22002529287j, atol=1e-10)


def test_halfspace_kernel_scaling_identity():
    k, r = 3.0, 0.2
    assert_allclose(halfspace_kernel(k, r), k**2 * halfspace_kernel(1.0, k * r), rtol=1e-13)


def test_halfspace_kernel_max_lower_bound():
    k = 100.0
    r0 = 1.0 / k
    r = np.logspace(np.log10(r0), 0, 400)
    peak = np.max(np.abs(halfspace_kernel(k, r)))
    assert peak >= 0.4 * np.sqrt(k) / r0**1.5


def test_smooth_factor_identity_bit_exact():
    k = 7.0
    r = np.linspace(0.05, 1.0, 11)
    lhs = halfspace_kernel(k, r) * np.exp(-1j * k * r)
    assert np.array_equal(lhs, smooth_kernel_factor(k, r))


def test_gauss_legendre_classical_values():
    x, w = gauss_legendre(1, -1.0, 1.0)
    assert_allclose(x, [0.0], atol=1e-15)
    assert_allclose(w, [2.0], rtol=1e-15)
    x2, w2 = gauss_legendre(2, -1.0, 1.0)
    assert_allclose(sorted(x2), [-1 / np.sqrt(3), 1 / np.sqrt(3)], rtol=1e-14)
    assert_allclose(w2, [1.0, 1.0], rtol=1e-14)


def test_gauss_legendre_exactness_degree_five():
    x, w = gauss_legendre(3, 0.0, 1.0)
    assert abs(np.sum(w * x**5) - 1.0 / 6.0) <= 1e-14


def test_gauss_legendre_polynomial_exactness_general_interval():
    x, w = gauss_legendre(5, 0.3, 2.7)
    for deg in range(2 * 5):
        exact = (2.7 ** (deg + 1) - 0.3 ** (deg + 1)) / (deg + 1)
        assert abs(np.sum(w * x**deg) - exact) <= 1e-13 * max(1.0, abs(exact))


def test_gauss_legendre_validation():
    with pytest.raises(ValueError):
        gauss_legendre(0, 0, 1)
    with pytest.raises(ValueError):
        gauss_legendre(4, 1.0, 0.5)


def test_cheb_fit_decreases_then_converges():
    k = 2 * np.pi * 51.2
    r0 = 1.0 / k
    errs = [cheb_fit_error(k, r0, 2.0, p).error for p in (4, 8, 12, 16, 20)]
    for a, b in zip(errs, errs[1:]):
        assert b <= a + max(1e-13, 0.01 * a)
    assert errs[-1] < errs[0] / 10


def test_cheb_fit_constant_target_is_exact():
    const = lambda r: np.full(np.shape(r), 2.5 + 0.5j)
    assert cheb_fit_error(10.0, 0.01, 2.0, 1, target=const).error <= 1e-13
    assert cheb_fit_error(10.0, 0.01, 2.0, 4, target=const).error <= 1e-13


def test_cheb_fit_p40_much_better_than_p10():
    k = 2 * np.pi * 51.2
    r0 = 1.0 / k
    e10 = cheb_fit_error(k, r0, 2.0, 10).error
    e40 = cheb_fit_error(k, r0, 2.0, 40).error
    assert e40 < e10 / 10


def test_cheb_fit_overflow_flag_small_alpha():
    k = 2 * np.pi * 51.2
    r0 = 1.0 / k
    res = cheb_fit_error(k, r0, 0.25, 40)
    assert isinstance(res, ChebFitResult)
    assert res.overflow  # raw powers r^(-j/alpha) exceed float64 range


def test_cheb_fit_validation():
    with pytest.raises(ValueError):
        cheb_fit_error(10.0, 1.5, 2.0, 5)
    with pytest.raises(ValueError):
        cheb_fit_error(10.0, 0.1, -1.0, 5)


def test_separable_inv_kr_meets_tolerance():
    ex = separable_inv_kr(64.0, 1.0 / 64.0, 1e-6)
    assert ex.measured_error <= 1e-6
    r = np.linspace(1.0 / 64.0, 1.0, 4000)
    direct = np.abs(ex.evaluate(r) - 1.0 / (64.0 * r)).max()
    assert direct <= 1e-6


def test_separable_inv_kr_term_bound():
    for k in (64.0, 256.0):
        for eps in (1e-4, 1e-8):
            ex = separable_inv_kr(k, 1.0 / k, eps)
            assert ex.j2 <= 3.0 * np.log2(k) * abs(np.log(eps))
            assert ex.measured_error <= eps


def test_separable_tail_bound_analytic():
    k, eps = 64.0, 1e-6
    ex = separable_inv_kr(k, 1.0 / k, eps)
    t_end = ex.intervals[-1][1]
    for r in (1.0 / k, 0.1, 1.0):
        assert np.exp(-k * r * t_end) / (k * r) <= eps


def test_separable_exp_split_identity():
    ex = separable_inv_kr(16.0, 1.0 / 16.0, 1e-4)
    x, y = 0.8, 0.3
    t = ex.nodes[3]
    lhs = np.exp(-16.0 * (x - y) * t)
    rhs = np.exp(-16.0 * x * t) * np.exp(16.0 * y * t)
    assert abs(lhs - rhs) <= 1e-15


def test_separable_validation():
    with pytest.raises(ValueError):
        separable_inv_kr(64.0, 1.0 / 64.0, 0.9)
    with pytest.raises(ValueError):
        separable_inv_kr(2.0, 0.5, 1e-4)
    with pytest.raises(ValueError):
        separable_inv_kr(64.0, 1e-4, 1e-4)


def test_rank_scan_identity_and_ones():
    n = 64
    assert offdiag_rank_scan(np.eye(n), 1.0 / n, 1.0 / n, 0.5) == 0
    assert offdiag_rank_scan(np.ones((n, n)), 1.0 / n, 1.0 / n, 0.5) == 1
    assert offdiag_rank_scan(np.ones((n, n)), 1.0 / n, 4.0 / n, 0.5) == 1


def test_rank_scan_monotonicity():
    k = 48.0
    n = 96
    d = sample_kernel_matrix(k, n)
    top = np.linalg.svd(d, compute_uv=False)[0]
    ranks_sep = [offdiag_rank_scan(d, 1.0 / n, r0, 1e-4 * top) for r0 in (1.0 / n, 4.0 / n, 16.0 / n)]
    assert ranks_sep == sorted(ranks_sep, reverse=True)  # nonincreasing in r0
    ranks_eps = [offdiag_rank_scan(d, 1.0 / n, 1.0 / n, e * top) for e in (1e-2, 1e-4, 1e-6)]
    assert ranks_eps == sorted(ranks_eps)  # larger eps -> smaller or equal rank


def test_rank_scan_nonsquare_rejected():
    with pytest.raises(ValueError):
        offdiag_rank_scan(np.ones((4, 6)), 0.25, 0.25, 0.5)


def test_sample_kernel_matrix_diagonal_handling():
    m = sample_kernel_matrix(8.0, 16)
    assert np.all(np.diag(m) == 0)
    m2 = sample_kernel_matrix(8.0, 16, diagonal=3.0 + 0j)
    assert np.all(np.diag(m2) == 3.0)
