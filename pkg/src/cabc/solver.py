"""Interior Helmholtz solves closed by a DtN realization on the boundary.

The ghost ring just outside the N x N solution grid is eliminated through
u_ghost = u_0 + h * (D u_0), which folds the map into the boundary rows.
The interior unknowns are eliminated by a sparse factorization; the
remaining 4N - 4 border unknowns carry the dense (or structured) DtN
coupling and are solved through a dense Schur complement, so the DtN map
enters only through applications to vectors.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dtn import BlockLedger, Orientation, boundary_slots
from .helmholtz import GridSpec
from .plr import PLRMatrix, plr_matvec, plr_matvec_t

__all__ = [
    "DtNVariant",
    "DtNRealization",
    "InteriorSolution",
    "InteriorDtNSolver",
    "solve_with_dtn",
    "solution_error",
    "point_source",
    "grazing_scan",
    "ConventionError",
]


class ConventionError(Exception):
    """DtN realization does not match the grid's size or corner convention."""


class DtNVariant(str, Enum):
    DENSE = "Dense"
    PROBED = "Probed"
    COMPRESSED = "Compressed"


def _apply_oriented(payload, orientation: Orientation, x: np.ndarray) -> np.ndarray:
    """y = orient(M) x without materializing the oriented copy."""
    if isinstance(payload, PLRMatrix):
        mv, mvt = plr_matvec, plr_matvec_t
        if orientation is Orientation.ID:
            return mv(payload, x)
        if orientation is Orientation.TRANSPOSE:
            return mvt(payload, x)
        if orientation is Orientation.ROT180:
            return mv(payload, x[::-1])[::-1]
        if orientation is Orientation.TRANSPOSE_ROT180:
            return mvt(payload, x[::-1])[::-1]
        raise ConventionError(f"orientation {orientation} not supported for PLR payloads")
    m = payload
    if orientation is Orientation.ID:
        return m @ x
    if orientation is Orientation.TRANSPOSE:
        return m.T @ x
    if orientation is Orientation.ROT180:
        return (m @ x[::-1])[::-1]
    if orientation is Orientation.TRANSPOSE_ROT180:
        return (m.T @ x[::-1])[::-1]
    raise ConventionError(f"orientation {orientation} not in the ledger vocabulary")


@dataclass
class DtNRealization:
    """DtN map assembled from representative blocks and the block ledger.

    ``payloads`` maps each representative position to a dense block
    (Dense/Probed variants) or a PLRMatrix (Compressed).  Every apply walks
    all 16 block positions, applying each representative once per copy with
    the copy's orientation.
    """

    variant: DtNVariant
    n: int  # points per side
    ledger: BlockLedger
    payloads: dict

    @classmethod
    def from_dense(cls, dense: np.ndarray, ledger: BlockLedger | None = None) -> "DtNRealization":
        n = dense.shape[0] // 4
        if ledger is None:
            from .dtn import BlockCopy, BlockEntry

            entries = tuple(
                BlockEntry((i, j), (BlockCopy((i, j), Orientation.ID),))
                for j in range(1, 5)
                for i in range(1, 5)
            )
            ledger = BlockLedger(entries)
        payloads = {
            e.representative: dense[
                (e.representative[0] - 1) * n : e.representative[0] * n,
                (e.representative[1] - 1) * n : e.representative[1] * n,
            ].copy()
            for e in ledger.entries
        }
        return cls(DtNVariant.DENSE, n, ledger, payloads)

    def apply(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=np.complex128)
        if g.shape != (4 * self.n,):
            raise ConventionError(f"expected boundary vector of length {4 * self.n}")
        out = np.zeros(4 * self.n, dtype=np.complex128)
        n = self.n
        for entry in self.ledger.entries:
            payload = self.payloads[entry.representative]
            for copy in entry.copies:
                i, j = copy.position
                out[(i - 1) * n : i * n] += _apply_oriented(
                    payload, copy.orientation, g[(j - 1) * n : j * n]
                )
        return out

    def apply_columns(self, g_cols: np.ndarray) -> np.ndarray:
        """Apply to each column of a (4N, k) matrix."""
        return np.stack([self.apply(g_cols[:, c]) for c in range(g_cols.shape[1])], axis=1)

    def matvec_cost(self) -> int:
        """Total fast-apply operation count over all 16 block positions."""
        from .plr import matvec_cost

        total = 0
        for entry in self.ledger.entries:
            payload = self.payloads[entry.representative]
            per_copy = (
                matvec_cost(payload) if isinstance(payload, PLRMatrix) else 2 * payload.size
            )
            total += per_copy * entry.multiplicity
        return total


@dataclass
class InteriorSolution:
    """Solution on the N x N grid (boundary ring included), row-major [i, j]."""

    u: np.ndarray
    grid: GridSpec
    residual: float
    source: object = None

    def norm(self) -> float:
        return float(np.linalg.norm(self.u))


def _ring_and_interior(n: int):
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ring = (ii == 0) | (ii == n - 1) | (jj == 0) | (jj == n - 1)
    return ii, jj, ring


class InteriorDtNSolver:
    """Factored interior problem for one (medium, grid, DtN realization).

    Reusable across right-hand sides; the border Schur complement absorbs
    the DtN coupling through 4N - 4 structured applications.
    """

    def __init__(self, medium, grid: GridSpec, realization: DtNRealization):
        if realization.n != grid.n:
            raise ConventionError(f"realization built for N = {realization.n}, grid has N = {grid.n}")
        self.grid = grid
        self.medium = medium
        self.realization = realization
        n, h = grid.n, grid.h
        ii, jj, ring = _ring_and_interior(n)
        self._ring_mask = ring
        order = np.full((n, n), -1, dtype=np.int64)
        interior_nodes = np.argwhere(~ring)
        ring_nodes = np.argwhere(ring)
        ni, nb = len(interior_nodes), len(ring_nodes)
        order[tuple(interior_nodes.T)] = np.arange(ni)
        order[tuple(ring_nodes.T)] = ni + np.arange(nb)
        self._order = order
        self._ni, self._nb = ni, nb
        self._nodes = np.vstack([interior_nodes, ring_nodes])

        x = (self._nodes[:, 0] + 0.5) * h
        y = (self._nodes[:, 1] + 0.5) * h
        c = np.asarray(medium.eval_speed(x, y), dtype=float)

        rows, cols, vals = [], [], []
        diag = -4.0 / h**2 + grid.omega**2 / c**2
        ghosts = np.zeros(ni + nb)
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            pi = self._nodes[:, 0] + di
            pj = self._nodes[:, 1] + dj
            inside = (pi >= 0) & (pi < n) & (pj >= 0) & (pj < n)
            src = np.where(inside)[0]
            rows.append(src)
            cols.append(order[pi[inside], pj[inside]])
            vals.append(np.full(src.size, 1.0 / h**2))
            ghosts[~inside] += 1.0
        # ghost elimination u_ghost = u_0 + h D u_0 returns the u_0 part here
        diag = diag + ghosts / h**2
        k = np.arange(ni + nb)
        rows.append(k)
        cols.append(k)
        vals.append(diag.astype(np.complex128))
        a = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(ni + nb, ni + nb),
            dtype=np.complex128,
        ).tocsc()
        self._a = a
        a_ii = a[:ni, :ni]
        self._a_ib = a[:ni, ni:]
        self._a_bi = a[ni:, :ni]
        a_bb = a[ni:, ni:].toarray()

        # slot <-> ring-unknown incidence (corners appear in two slots)
        slots = boundary_slots(n)
        slot_ring = np.array(
            [order[i, j] - ni for side in slots.ring for (i, j) in side], dtype=np.int64
        )
        self._slot_ring = slot_ring

        p_in = np.zeros((4 * n, nb))
        p_in[np.arange(4 * n), slot_ring] = 1.0
        d_cols = realization.apply_columns(p_in.astype(np.complex128))
        coupling = (1.0 / h) * (p_in.T @ d_cols)

        self._lu_ii = spla.splu(a_ii)
        x_ib = self._lu_ii.solve(self._a_ib.toarray())
        self._schur = a_bb + coupling - self._a_bi @ x_ib
        self._schur_lu = None

    def solve(self, f) -> InteriorSolution:
        """f: callable f(x, y), or array over the N x N grid (row-major [i, j])."""
        n, h = self.grid.n, self.grid.h
        if callable(f):
            x = (self._nodes[:, 0] + 0.5) * h
            y = (self._nodes[:, 1] + 0.5) * h
            fv = np.asarray(f(x, y), dtype=np.complex128)
        else:
            fv = np.asarray(f, dtype=np.complex128).reshape(n, n)[tuple(self._nodes.T)]
        import scipy.linalg as sla

        ni = self._ni
        fi, fb = fv[:ni], fv[ni:]
        if self._schur_lu is None:
            self._schur_lu = sla.lu_factor(self._schur)
        ub = sla.lu_solve(self._schur_lu, fb - self._a_bi @ self._lu_ii.solve(fi))
        ui = self._lu_ii.solve(fi - self._a_ib @ ub)
        uvec = np.concatenate([ui, ub])
        # residual of the reduced system including the DtN coupling
        slot_vals = uvec[ni:][self._slot_ring]
        coup = np.zeros_like(uvec)
        dsl = self.realization.apply(slot_vals)
        np.add.at(coup[ni:], self._slot_ring, dsl / self.grid.h)
        res_vec = self._a @ uvec + coup - fv
        denom = max(np.linalg.norm(fv), 1e-300)
        residual = float(np.linalg.norm(res_vec) / denom)
        u = np.zeros((n, n), dtype=np.complex128)
        u[tuple(self._nodes.T)] = uvec
        return InteriorSolution(u=u, grid=self.grid, residual=residual, source=f)


def solve_with_dtn(medium, grid: GridSpec, realization: DtNRealization, f) -> InteriorSolution:
    """One-shot interior solve; build an :class:`InteriorDtNSolver` to reuse."""
    return InteriorDtNSolver(medium, grid, realization).solve(f)


def solution_error(u, u_ref) -> float:
    """Relative l2 error over the box; rejects a zero reference."""
    u = np.asarray(u.u if isinstance(u, InteriorSolution) else u)
    u_ref = np.asarray(u_ref.u if isinstance(u_ref, InteriorSolution) else u_ref)
    if u.shape != u_ref.shape:
        raise ValueError("solutions live on different grids")
    nrm = np.linalg.norm(u_ref)
    if nrm == 0:
        raise ValueError("reference solution has zero norm")
    return float(np.linalg.norm(u - u_ref) / nrm)


def point_source(grid: GridSpec, x0: float, y0: float, amplitude: float = 1.0) -> np.ndarray:
    """Single-node Kronecker delta scaled by 1/h^2 at the node nearest (x0, y0)."""
    n, h = grid.n, grid.h
    i = int(np.clip(np.round(x0 / h - 0.5), 0, n - 1))
    j = int(np.clip(np.round(y0 / h - 0.5), 0, n - 1))
    f = np.zeros((n, n), dtype=np.complex128)
    f[i, j] = amplitude / h**2
    return f


def grazing_scan(medium, grid: GridSpec, realization: DtNRealization, offsets, reference=None):
    """Solution error against the dense-D solve as a source nears the boundary.

    Offsets are distances of the point source (x = 0.5) above the bottom
    edge; each must be at least 2h.  Returns a list of (offset, error).
    """
    h = grid.h
    for off in offsets:
        if off < 2 * h - 1e-12:
            raise ValueError(f"offset {off} below the 2h sanity limit")
    if reference is None:
        raise ValueError("grazing_scan needs a reference realization (dense D)")
    solver = InteriorDtNSolver(medium, grid, realization)
    ref_solver = InteriorDtNSolver(medium, grid, reference)
    out = []
    for off in offsets:
        f = point_source(grid, 0.5, off)
        u = solver.solve(f)
        u_ref = ref_solver.solve(f)
        out.append((float(off), solution_error(u, u_ref)))
    return out
