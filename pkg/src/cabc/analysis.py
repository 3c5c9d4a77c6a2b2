"""Half-space DtN kernel analysis: fits, separable expansions, rank scans.

The uniform half-space kernel K(r) = (i k^2 / 2) H_1(kr)/(kr) drives two
verifications: convergence of inverse-power fits to the smooth factor
K(r) exp(-ikr) in a Chebyshev-mapped variable, and the constructive
separable expansion of the 1/(kr) factor by Gauss-Legendre quadrature on a
dyadic partition of the Laplace integral.
"""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev as npcheb
from scipy.special import hankel1

__all__ = [
    "hankel_h1",
    "halfspace_kernel",
    "smooth_kernel_factor",
    "ChebFitResult",
    "cheb_fit_error",
    "gauss_legendre",
    "SeparableExpansion",
    "separable_inv_kr",
    "SeparableExpansionError",
    "offdiag_rank_scan",
    "sample_kernel_matrix",
]


def hankel_h1(z):
    """H_1^(1)(z) = J_1(z) + i Y_1(z) for z > 0."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0.0):
        raise ValueError("hankel_h1 requires z > 0")
    return hankel1(1, z)


def halfspace_kernel(k: float, r):
    """Half-space DtN kernel K(r) = (i k^2 / 2) H_1^(1)(kr) / (kr)."""
    if k <= 0:
        raise ValueError("wavenumber k must be positive")
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise ValueError("kernel is singular at r = 0; need r > 0")
    kr = k * r
    return 0.5j * k**2 * hankel_h1(kr) / kr


def smooth_kernel_factor(k: float, r):
    """K(r) with the leading oscillation removed: H(r) = K(r) exp(-i k r)."""
    r = np.asarray(r, dtype=float)
    return halfspace_kernel(k, r) * np.exp(-1j * k * r)


@dataclass(frozen=True)
class ChebFitResult:
    p: int
    alpha: float
    error: float  # sup-norm error on the verification grid
    overflow: bool  # the equivalent raw inverse-power basis exceeds float64


def cheb_fit_error(k: float, r0: float, alpha: float, p: int, n_check: int = 2000, target=None) -> ChebFitResult:
    """Sup-norm error of the p-term fit of the smooth kernel factor.

    The fit is Chebyshev in xi(r) = affine(r^(-1/alpha)), equivalent to a
    p-term combination of inverse powers r^(-j/alpha) once the oscillation
    is restored; collocation uses 4p first-kind Chebyshev points and the
    error is evaluated on a log-spaced r grid in [r0, 1].  ``target``
    substitutes another callable of r for the kernel factor (testing seam).
    """
    if not (0.0 < r0 < 1.0):
        raise ValueError("need 0 < r0 < 1")
    if p < 1 or alpha <= 0:
        raise ValueError("need p >= 1 and alpha > 0")
    if target is None:
        target = lambda r: smooth_kernel_factor(k, r)
    # float64 range of the raw basis r^(-j/alpha), j up to p
    overflow = (p / alpha) * np.log10(1.0 / r0) > 308.0
    scale = r0 ** (-1.0 / alpha) - 1.0

    def xi_of_r(r):
        return 2.0 * (r ** (-1.0 / alpha) - 1.0) / scale - 1.0

    def r_of_xi(xi):
        return ((xi + 1.0) * 0.5 * scale + 1.0) ** (-alpha)

    m = 4 * p
    xi_c = np.cos((2 * np.arange(m) + 1) * np.pi / (2 * m))
    vals = np.asarray(target(r_of_xi(xi_c)), dtype=np.complex128)
    coef = npcheb.chebfit(xi_c, vals, deg=p - 1)
    r_check = np.logspace(np.log10(r0), 0.0, n_check)
    fit = npcheb.chebval(xi_of_r(r_check), coef)
    err = float(np.max(np.abs(fit - np.asarray(target(r_check), dtype=np.complex128))))
    return ChebFitResult(p=p, alpha=alpha, error=err, overflow=bool(overflow))


def gauss_legendre(n: int, a: float, b: float):
    """Gauss-Legendre nodes and weights on [a, b]; exact to degree 2n - 1."""
    if not 1 <= n <= 128:
        raise ValueError("n must be in 1..128")
    if not a < b:
        raise ValueError("need a < b")
    x, w = np.polynomial.legendre.leggauss(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


class SeparableExpansionError(Exception):
    """Verification failed even after escalating the per-interval order."""


@dataclass(frozen=True)
class SeparableExpansion:
    """Sum of decaying exponentials approximating 1/(kr) on [r0, 1].

    1/(kr) = int_0^inf exp(-krt) dt; the integral is truncated at
    T = 2^M |log eps| / k and integrated by n-point Gauss-Legendre on the
    dyadic intervals I_j, giving terms w_p exp(-k r t_p).  Each term splits
    as exp(-k x t) exp(+k y t) for r = x - y > 0, so the expansion is
    separable with J2 = (#intervals) * n terms.
    """

    k: float
    r0: float
    target_eps: float
    weights: np.ndarray
    nodes: np.ndarray
    intervals: tuple
    order_per_interval: int
    measured_error: float

    @property
    def j2(self) -> int:
        return self.weights.size

    def evaluate(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        return np.exp(-self.k * np.outer(r, self.nodes)) @ self.weights


def _build_expansion(k, log_eps, m_intervals, n_per):
    bounds = [0.0, 2.0 * log_eps / k]
    for j in range(1, m_intervals):
        bounds.append(2.0 ** (j + 1) * log_eps / k)
    nodes = []
    weights = []
    intervals = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        t, w = gauss_legendre(n_per, a, b)
        nodes.append(t)
        weights.append(w)
        intervals.append((a, b))
    return np.concatenate(weights), np.concatenate(nodes), tuple(intervals)


def separable_inv_kr(k: float, r0: float, eps: float, n_grid: int = 4000) -> SeparableExpansion:
    """Constructive separable expansion of 1/(kr), max error <= eps on [r0, 1].

    The number of dyadic intervals is M = ceil(log2 k), enlarged if needed
    so the truncated tail exp(-k r T)/(k r) stays below eps/2 at r = r0.
    Each interval carries n = ceil(|ln eps|) nodes; on verification failure
    n is escalated once by 2, and persistent failure raises.
    """
    if not (0.0 < eps <= 0.5):
        raise ValueError("eps must be in (0, 1/2]")
    if k < 4.0:
        raise ValueError("k must be >= 4")
    if r0 * k < 0.5:
        raise ValueError("need r0 * k >= 0.5")
    log_eps = abs(np.log(eps))
    m = int(np.ceil(np.log2(k)))
    # tail bound exp(-k r0 T)/(k r0) <= eps/2 with T = 2^m log_eps / k
    while True:
        t_end = 2.0**m * log_eps / k
        if np.exp(-k * r0 * t_end) / (k * r0) <= eps / 2.0 or m > 60:
            break
        m += 1
    n_per = int(np.ceil(log_eps))
    r_grid = np.linspace(r0, 1.0, n_grid)
    for n_try in (n_per, n_per + 2):
        w, t, intervals = _build_expansion(k, log_eps, m, n_try)
        exp_vals = np.exp(-k * np.outer(r_grid, t)) @ w
        err = float(np.max(np.abs(exp_vals - 1.0 / (k * r_grid))))
        if err <= eps:
            return SeparableExpansion(
                k=k,
                r0=r0,
                target_eps=eps,
                weights=w,
                nodes=t,
                intervals=intervals,
                order_per_interval=n_try,
                measured_error=err,
            )
    raise SeparableExpansionError(
        f"measured error {err:.3e} exceeds eps = {eps:.3e} after escalating to n = {n_try}"
    )


def offdiag_rank_scan(d: np.ndarray, h: float, r0: float, eps: float) -> int:
    """Max numerical rank over maximal dyadic lower-triangle blocks at
    separation >= r0/h.

    Numerical rank counts singular values at or above the absolute
    tolerance eps (normalize d first for a relative scan).  Blocks are the
    maximal dyadic squares whose index separation i - j is everywhere at
    least ceil(r0/h); returns 0 when every scanned block is numerically
    zero or no block qualifies.
    """
    d = np.asarray(d)
    n = d.shape[0]
    if d.shape != (n, n):
        raise ValueError("expected a square matrix")
    sep = max(1, int(np.ceil(r0 / h)))
    best = 0

    def scan(a, b, sr, sc):
        nonlocal best
        if sr == 0 or sc == 0:
            return
        if a >= b + sc and (a - (b + sc - 1)) >= sep:
            block = d[a : a + sr, b : b + sc]
            if np.any(block):
                s = np.linalg.svd(block, compute_uv=False)
                best = max(best, int(np.count_nonzero(s >= eps)))
            return
        if sr == 1 and sc == 1:
            return
        hr, hc = (sr + 1) // 2, (sc + 1) // 2
        for da, nsr in ((0, hr), (hr, sr - hr)):
            for db, nsc in ((0, hc), (hc, sc - hc)):
                ra, cb = a + da, b + db
                if ra + nsr > cb:  # overlaps the lower triangle
                    scan(ra, cb, nsr, nsc)

    scan(0, 0, n, n)
    return best


def sample_kernel_matrix(k: float, n: int, diagonal: complex | None = None) -> np.ndarray:
    """Dense sampling of the half-space kernel: h * K(h |i - j|), h = 1/n.

    The singular diagonal is left at 0 (or the supplied value); rank scans
    exclude it anyway.
    """
    h = 1.0 / n
    idx = np.arange(n)
    r = h * np.abs(idx[:, None] - idx[None, :])
    out = np.zeros((n, n), dtype=np.complex128)
    mask = r > 0
    out[mask] = h * halfspace_kernel(k, r[mask])
    if diagonal is not None:
        np.fill_diagonal(out, diagonal)
    return out
