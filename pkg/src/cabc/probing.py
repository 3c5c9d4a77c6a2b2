"""Matrix probing of DtN blocks: basis construction, recovery, diagnostics.

Basis matrices discretize oscillatory kernels exp(i omega tau(x, y)) times
inverse-power amplitudes in the separation and corner coordinates.  The
edge geometry fixes the distances: along one edge for diagonal blocks,
along the boundary arc through the shared corner for adjacent blocks, and
across the box for opposite blocks.
"""

from dataclasses import dataclass

import numpy as np

from .dtn import boundary_slots
from .medium import Medium, edge_cumulative_slowness

__all__ = [
    "BasisSpec",
    "BasisSet",
    "ProbeResult",
    "exponent_pairs",
    "default_block_spec",
    "build_basis",
    "orthonormalize",
    "probe_block",
    "condition_numbers",
    "probing_errors",
    "approximation_errors",
    "DegenerateBasisError",
]


class DegenerateBasisError(Exception):
    """More than half the raw family was linearly dependent."""


PHASE_KINDS = ("+T1", "-T1", "+T2", "-T2", "const")


@dataclass(frozen=True)
class BasisSpec:
    """Recipe for one block's raw basis family.

    ``exponent_pairs`` are (j1, j2) with j1 governing decay in the
    separation coordinate and j2 the second (corner or asymmetry)
    coordinate; they must be ordered by nondecreasing j1 + 2 j2.

    When the family carries the corner-bounce phases +/-T2, those matrices
    draw from ``bounce_pairs`` and decay primarily in the bounce path
    length (the reflected wave is singular where both points approach the
    same corner, not on the diagonal).  The two streams interleave roughly
    3:1 so every prefix of the family stays balanced.
    """

    alpha: float = 2.0
    exponent_pairs: tuple = ((0, 0),)
    phase_kinds: tuple = ("+T1",)
    bounce_pairs: tuple = ()
    theta_kind: str = "MinSum"  # MinSum | None
    second_factor: str = "InversePower"  # InversePower | Polynomial
    diagonal_family: str = "Oscillatory"  # Oscillatory | PolynomialBothDirections

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        for pairs in (self.exponent_pairs, self.bounce_pairs):
            weights = [j1 + 2 * j2 for (j1, j2) in pairs]
            if any(b < a for a, b in zip(weights, weights[1:])):
                raise ValueError("exponent pairs must be ordered by nondecreasing j1 + 2 j2")
        for k in self.phase_kinds:
            if k not in PHASE_KINDS:
                raise ValueError(f"unknown phase kind {k}")
        if self.bounce_pairs and not {"+T2", "-T2"} <= set(self.phase_kinds):
            raise ValueError("bounce_pairs requires the +/-T2 phase kinds")

    @property
    def direct_kinds(self) -> tuple:
        return tuple(k for k in self.phase_kinds if k not in ("+T2", "-T2"))

    @property
    def bounce_kinds(self) -> tuple:
        return tuple(k for k in self.phase_kinds if k in ("+T2", "-T2"))

    @property
    def p(self) -> int:
        if self.bounce_kinds:
            return len(self.exponent_pairs) * len(self.direct_kinds) + len(self.bounce_pairs) * len(
                self.bounce_kinds
            )
        return len(self.exponent_pairs) * len(self.phase_kinds)


@dataclass
class BasisSet:
    """Ordered family of N_r x N_c basis matrices (stacked 3-D array)."""

    matrices: np.ndarray
    orthonormal: bool
    gram_condition: float
    spec: BasisSpec
    block: tuple
    labels: tuple = ()

    @property
    def p(self) -> int:
        return self.matrices.shape[0]

    @property
    def shape(self) -> tuple:
        return self.matrices.shape[1:]


def exponent_pairs(count: int) -> tuple:
    """First ``count`` pairs (j1, j2) in the triangular order j1 + 2 j2."""
    out = []
    s = 0
    while len(out) < count:
        for j2 in range(s // 2 + 1):
            out.append((s - 2 * j2, j2))
            if len(out) == count:
                break
        s += 1
    return tuple(out)


def _block_distance(i: int, j: int) -> str:
    if i == j:
        return "diagonal"
    if abs(i - j) == 2:
        return "opposite"
    return "adjacent"


def default_block_spec(block, p: int, two_traveltimes: bool = False, periodic: bool = False) -> BasisSpec:
    """Default family per block distance.

    Diagonal blocks use +/-T1 oscillations, adding +/-T2 for the
    two-traveltime family; adjacent blocks a single corner-path phase with
    polynomial asymmetry factors; opposite blocks one constant-amplitude
    oscillatory matrix.
    """
    i, j = block
    dist = _block_distance(i, j)
    if periodic and dist == "diagonal":
        return BasisSpec(
            exponent_pairs=exponent_pairs(max(1, p)),
            phase_kinds=("const",),
            diagonal_family="PolynomialBothDirections",
        )
    if dist == "diagonal" and two_traveltimes:
        groups = max(1, p // 2)  # sign pairs
        n_bounce = groups // 4
        n_direct = groups - n_bounce
        return BasisSpec(
            exponent_pairs=exponent_pairs(n_direct),
            bounce_pairs=exponent_pairs(max(1, n_bounce)) if n_bounce else (),
            phase_kinds=("+T1", "-T1", "+T2", "-T2") if n_bounce else ("+T1", "-T1"),
        )
    if dist == "diagonal":
        kinds = ("+T1", "-T1")
    elif dist == "adjacent":
        kinds = ("+T1",)
    else:
        kinds = ("const",)
    npairs = max(1, int(np.ceil(p / len(kinds))))
    return BasisSpec(
        exponent_pairs=exponent_pairs(npairs),
        phase_kinds=kinds,
        second_factor="Polynomial" if dist == "adjacent" else "InversePower",
        theta_kind="MinSum" if dist == "diagonal" else "None",
    )


def _arc_geometry(medium: Medium, grid, side: int, coords: np.ndarray, nsub: int):
    """Arc position and cumulative arc slowness of edge coords on a side.

    The arc runs counter-clockwise from the corner (0, 0); side s occupies
    [s-1, s] and its slowness accumulates along the traversal direction.
    """
    full = [float(edge_cumulative_slowness(medium, s, [1.0], nsub)[0]) for s in (1, 2, 3, 4)]
    s_nat = edge_cumulative_slowness(medium, side, coords, nsub)
    if side == 1:
        arc = coords
        slow = s_nat
    elif side == 2:
        arc = 1.0 + coords
        slow = full[0] + s_nat
    elif side == 3:
        arc = 2.0 + (1.0 - coords)
        slow = full[0] + full[1] + (full[2] - s_nat)
    else:
        arc = 3.0 + (1.0 - coords)
        slow = full[0] + full[1] + full[2] + (full[3] - s_nat)
    return arc, slow, sum(full)


def _corner_slowness(medium: Medium, corner_arc: int, nsub: int) -> float:
    """Cumulative arc slowness at a corner (arc position 0..3)."""
    full = [float(edge_cumulative_slowness(medium, s, [1.0], nsub)[0]) for s in (1, 2, 3, 4)]
    return float(np.concatenate([[0.0], np.cumsum(full)])[corner_arc])


def build_basis(
    spec: BasisSpec,
    medium: Medium,
    grid,
    block,
    row_subset=None,
    col_subset=None,
    nsub: int = 512,
) -> BasisSet:
    """Raw (non-orthonormal) basis family for one block of the DtN map.

    ``row_subset``/``col_subset`` restrict to index ranges of the stored
    side, used when a discontinuous medium forces sub-block probing.
    """
    n = grid.n
    omega = grid.omega
    h = grid.h
    bi, bj = block
    slots = boundary_slots(n)
    rows = np.arange(n) if row_subset is None else np.asarray(row_subset)
    cols = np.arange(n) if col_subset is None else np.asarray(col_subset)
    tx = slots.tvals[bi - 1][rows]
    ty = slots.tvals[bj - 1][cols]
    dist = _block_distance(bi, bj)

    mats = []
    labels = []

    if spec.diagonal_family == "PolynomialBothDirections" and dist == "diagonal":
        u = tx[:, None] - ty[None, :]
        v = tx[:, None] + ty[None, :] - 1.0
        for (j1, j2) in spec.exponent_pairs:
            mats.append((u**j1 * v**j2).astype(np.complex128))
            labels.append(f"poly({j1},{j2})")
        return BasisSet(np.array(mats), False, np.nan, spec, tuple(block), tuple(labels))

    if dist == "diagonal":
        slow = edge_cumulative_slowness(medium, bi, slots.tvals[bi - 1], nsub)
        full = float(edge_cumulative_slowness(medium, bi, [1.0], nsub)[0])
        sx = slow[rows]
        sy = slow[cols]
        d = np.abs(tx[:, None] - ty[None, :])
        tau1 = np.abs(sx[:, None] - sy[None, :])
        near = np.minimum(sx[:, None], sy[None, :])
        far = full - np.maximum(sx[:, None], sy[None, :])
        tau2 = tau1 + 2.0 * np.minimum(near, far)
        theta = np.minimum(tx[:, None] + ty[None, :], 2.0 - tx[:, None] - ty[None, :])
        phases = {"+T1": omega * tau1, "-T1": -omega * tau1, "+T2": omega * tau2, "-T2": -omega * tau2, "const": np.zeros_like(tau1)}
    elif dist == "adjacent":
        arc_r, slow_r, total = _arc_geometry(medium, grid, bi, tx, nsub)
        arc_c, slow_c, _ = _arc_geometry(medium, grid, bj, ty, nsub)
        corners = {frozenset((1, 2)): 1, frozenset((2, 3)): 2, frozenset((3, 4)): 3, frozenset((4, 1)): 0}
        c0 = corners[frozenset((bi, bj))]
        corner_slow = _corner_slowness(medium, c0, nsub)
        dr = np.minimum(np.abs(arc_r - c0), 4.0 - np.abs(arc_r - c0))
        dc = np.minimum(np.abs(arc_c - c0), 4.0 - np.abs(arc_c - c0))
        tr = np.minimum(np.abs(slow_r - corner_slow), total - np.abs(slow_r - corner_slow))
        tc = np.minimum(np.abs(slow_c - corner_slow), total - np.abs(slow_c - corner_slow))
        d = dr[:, None] + dc[None, :]  # boundary path through the shared corner
        tau1 = tr[:, None] + tc[None, :]
        theta = 0.5 * (dr[:, None] - dc[None, :])
        phases = {"+T1": omega * tau1, "-T1": -omega * tau1, "const": np.zeros_like(tau1)}
    else:
        px, py = _side_points(bi, tx)
        qx, qy = _side_points(bj, ty)
        d = np.sqrt((px[:, None] - qx[None, :]) ** 2 + (py[:, None] - qy[None, :]) ** 2)
        slow_ends = 0.5 * (
            1.0 / medium.eval_speed(px, py)[:, None] + 1.0 / medium.eval_speed(qx, qy)[None, :]
        )
        tau1 = d * slow_ends
        theta = np.zeros_like(d)
        phases = {"+T1": omega * tau1, "-T1": -omega * tau1, "const": omega * tau1}

    def direct_matrix(kind, j1, j2):
        amp = (h + d) ** (-j1 / spec.alpha)
        if spec.second_factor == "Polynomial":
            sec = theta**j2
        else:
            sec = (h + np.abs(theta)) ** (-j2 / spec.alpha)
        return np.exp(1j * phases[kind]) * amp * sec

    def bounce_matrix(kind, j1, j2):
        amp = (h + np.abs(theta)) ** (-j1 / spec.alpha) * (h + d) ** (-j2 / spec.alpha)
        return np.exp(1j * phases[kind]) * amp

    if spec.bounce_kinds and dist == "diagonal":
        direct = list(spec.exponent_pairs)
        bounce = list(spec.bounce_pairs)
        slot = 0
        while direct or bounce:
            take_bounce = bounce and (slot % 4 == 3 or not direct)
            if take_bounce:
                j1, j2 = bounce.pop(0)
                for kind in spec.bounce_kinds:
                    mats.append(bounce_matrix(kind, j1, j2))
                    labels.append(f"{kind} j=({j1},{j2})")
            else:
                j1, j2 = direct.pop(0)
                for kind in spec.direct_kinds:
                    mats.append(direct_matrix(kind, j1, j2))
                    labels.append(f"{kind} j=({j1},{j2})")
            slot += 1
    else:
        order = sorted(
            (j1 + 2 * j2, j2, ki)
            for (j1, j2) in spec.exponent_pairs
            for ki in range(len(spec.phase_kinds))
        )
        seen = set()
        for (w, j2, ki) in order:
            j1 = w - 2 * j2
            kind = spec.phase_kinds[ki]
            if (j1, j2, kind) in seen:
                continue
            seen.add((j1, j2, kind))
            mats.append(direct_matrix(kind, j1, j2))
            labels.append(f"{kind} j=({j1},{j2})")
    return BasisSet(np.array(mats), False, np.nan, spec, tuple(block), tuple(labels))


def _side_points(side: int, t):
    from .medium import side_point

    return side_point(side, t)


def orthonormalize(raw: BasisSet, drop_tol: float = 1e-10) -> BasisSet:
    """Gram-Schmidt (twice) in the Frobenius inner product; span preserved.

    Elements whose post-projection norm falls below drop_tol times their
    original norm are dropped with a warning; losing more than half the
    family raises DegenerateBasisError.
    """
    import warnings

    p = raw.p
    shape = raw.shape
    vecs = raw.matrices.reshape(p, -1).copy()
    orig = np.linalg.norm(vecs, axis=1)
    kept = []
    kept_labels = []
    for j in range(p):
        v = vecs[j]
        for _ in range(2):
            for q in kept:
                v = v - (q.conj() @ v) * q
        nrm = np.linalg.norm(v)
        if nrm < drop_tol * orig[j]:
            warnings.warn(f"basis element {j} dropped as dependent (norm ratio {nrm / orig[j]:.2e})")
            continue
        kept.append(v / nrm)
        kept_labels.append(raw.labels[j] if raw.labels else str(j))
    if len(kept) < (p + 1) // 2:
        raise DegenerateBasisError(f"only {len(kept)} of {p} basis elements independent")
    mats = np.array(kept).reshape(len(kept), *shape)
    gram = np.array(kept) @ np.array(kept).conj().T
    kappa = float(np.linalg.cond(gram))
    return BasisSet(mats, True, kappa, raw.spec, raw.block, tuple(kept_labels))


@dataclass
class ProbeResult:
    """Recovered coefficients for one block; reconstruction is c . B."""

    coefficients: np.ndarray
    q: int
    cond_psi: float
    basis: BasisSet
    seed_labels: tuple = ()

    def reconstruct(self, p: int | None = None) -> np.ndarray:
        c = self.coefficients if p is None else self.coefficients[:p]
        return np.tensordot(c, self.basis.matrices[: c.size], axes=(0, 0))

    def to_json_dict(self) -> dict:
        return {
            "block": list(self.basis.block),
            "q": self.q,
            "cond_psi": self.cond_psi,
            "coefficients": [[float(c.real), float(c.imag)] for c in self.coefficients],
        }


def _stack_psi(basis: BasisSet, zs: np.ndarray) -> np.ndarray:
    """Psi: stacked (q * N_r) x p matrix of basis-times-random-vector columns."""
    cols = np.einsum("pij,jq->qip", basis.matrices, zs)
    q, nr, p = cols.shape
    return cols.reshape(q * nr, p)


def probe_block(apply_fn, basis: BasisSet, q: int, rng, seed_labels=(), zs=None, ws=None) -> ProbeResult:
    """Recover expansion coefficients from q random applications of the block.

    ``apply_fn`` maps a length-N_c real vector to the block's length-N_r
    response (an exterior solve restricted to the output side); pass
    precomputed ``zs`` (N_c, q) and per-probe responses ``ws`` to reuse
    solves shared across a block column.  The least-squares system stacks
    the per-probe matrices; the pseudo-inverse uses an SVD cutoff of 1e-12
    times the top singular value.
    """
    if not basis.orthonormal:
        raise ValueError("probe_block expects an orthonormalized basis")
    nr, nc = basis.shape
    if zs is None:
        zs = rng.standard_normal((nc, q))
        ws = [np.asarray(apply_fn(zs[:, r]), dtype=np.complex128) for r in range(q)]
    else:
        zs = np.asarray(zs)[:, :q]
        ws = [np.asarray(w, dtype=np.complex128) for w in ws[:q]]
    if q * nr < basis.p:
        raise ValueError(f"q N = {q * nr} rows cannot determine p = {basis.p} coefficients")
    w = np.concatenate(ws)
    psi = _stack_psi(basis, zs)
    u, s, vh = np.linalg.svd(psi, full_matrices=False)
    if s[0] == 0 or s[-1] < 1e-12 * s[0]:
        raise np.linalg.LinAlgError(f"rank-deficient probing system, cond = {s[0] / max(s[-1], 1e-300):.3e}")
    c = vh.conj().T @ ((u.conj().T @ w) / s)
    return ProbeResult(c, q, float(s[0] / s[-1]), basis, tuple(seed_labels))


def _spectral_norm(mat: np.ndarray, iters: int = 20, tol: float = 1e-6, seed: int = 7) -> float:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(mat.shape[1]) + 1j * rng.standard_normal(mat.shape[1])
    v /= np.linalg.norm(v)
    prev = 0.0
    for _ in range(iters):
        w = mat.conj().T @ (mat @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        est = np.sqrt(nrm)
        if abs(est - prev) <= tol * est:
            break
        prev = est
    return float(est)


def condition_numbers(basis: BasisSet, psi: np.ndarray | None = None):
    """Weak condition numbers (lambda, kappa) and cond(Psi) when given.

    lambda = max_j ||B_j||_2 sqrt(N) / ||B_j||_F (spectral norms by power
    iteration); kappa is the condition number of the Frobenius Gram matrix.
    """
    n = basis.shape[0]
    lam = 0.0
    for j in range(basis.p):
        b = basis.matrices[j]
        lam = max(lam, _spectral_norm(b) * np.sqrt(n) / np.linalg.norm(b))
    vecs = basis.matrices.reshape(basis.p, -1)
    gram = vecs @ vecs.conj().T
    kappa = float(np.linalg.cond(gram))
    cond_psi = float(np.linalg.cond(psi)) if psi is not None else np.nan
    return float(lam), kappa, cond_psi


def approximation_errors(m_ref: np.ndarray, basis: BasisSet, multiplicity: int, norm_d: float, p_values) -> np.ndarray:
    """p-term approximation errors sqrt(m) ||M - M_p||_F / ||D||_F.

    Uses the orthonormal-projection identity: the squared residual is
    ||M||_F^2 minus the cumulative squared true coefficients.
    """
    if not basis.orthonormal:
        raise ValueError("approximation error needs an orthonormal basis")
    vecs = basis.matrices.reshape(basis.p, -1)
    coeffs = vecs.conj() @ np.asarray(m_ref).ravel()
    total = np.linalg.norm(m_ref) ** 2
    cum = np.cumsum(np.abs(coeffs) ** 2)
    out = []
    for p in p_values:
        if p < 1 or p > basis.p:
            raise ValueError(f"p = {p} outside family of size {basis.p}")
        res = np.sqrt(max(total - cum[p - 1], 0.0))
        out.append(np.sqrt(multiplicity) * res / norm_d)
    return np.asarray(out)


def probing_errors(
    result: ProbeResult,
    multiplicity: int,
    norm_d: float,
    m_ref: np.ndarray | None = None,
    heldout: list | None = None,
    heldout_labels=(),
) -> dict:
    """Probing error of a block, dense and/or randomized-estimate paths.

    ``heldout`` is a list of (z, M z) pairs from exterior solves disjoint
    from the recovery probes; reusing recovery seeds is an error.
    """
    out = {"multiplicity": multiplicity, "q": result.q, "cond_psi": result.cond_psi}
    mt = result.reconstruct()
    if m_ref is not None:
        out["probing_error"] = float(np.sqrt(multiplicity) * np.linalg.norm(m_ref - mt) / norm_d)
    if heldout is not None:
        if set(heldout_labels) & set(result.seed_labels):
            raise ValueError("held-out probes reuse recovery seed labels")
        sq = [float(np.linalg.norm(np.asarray(w) - mt @ np.asarray(z)) ** 2) for (z, w) in heldout]
        est = np.sqrt(np.mean(sq))
        out["probing_error_estimate"] = float(np.sqrt(multiplicity) * est / norm_d)
    return out
