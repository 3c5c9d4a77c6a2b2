"""Discrete exterior DtN map: construction, oracles, and block ledger.

Boundary storage is side-major, counter-clockwise: side 1 is the bottom
edge left to right, side 2 the right edge upward, side 3 the top edge right
to left, side 4 the left edge downward.  Each side stores N values, so the
four corner Dirichlet values appear twice (once per incident side); the
Neumann output pairs each side's N ghost nodes with the same slots and
never involves the four outside corner nodes.

With this convention every slot pairs with exactly one ghost node, and the
discrete map D = -Sel A^{-1} Sel^T / h^3 - I/h inherits the exact complex
symmetry of the exterior matrix A.
"""

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .helmholtz import (
    FactoredSystem,
    GridSpec,
    SparseSystem,
    SystemConfig,
    assemble_system,
    factor,
)

__all__ = [
    "Orientation",
    "BlockCopy",
    "BlockLedger",
    "DtNMatrix",
    "ExteriorDtN",
    "boundary_slots",
    "orient_block",
    "ledger_for",
    "dtn_apply",
    "assemble_dense_dtn",
    "eliminate_dtn_oracle",
    "eliminate_dtn_layer_by_layer",
    "layer_strip_halfspace",
    "halfspace_dtn_from_strip",
    "estimate_frobenius_norm",
    "block_of",
    "rebuild_dense_from_ledger",
]

DENSE_N_GUARD = 1024
ELIMINATION_UNKNOWN_GUARD = 40_000


@dataclass(frozen=True)
class BoundarySlots:
    """Slot -> node maps for the 4N side-major boundary indexing."""

    n: int
    ring: tuple  # ring[s][m] = (i, j) Dirichlet node of slot (s+1, m)
    ghost: tuple  # ghost[s][m] = (i, j) exterior node paired with the slot
    tvals: np.ndarray  # (4, N) edge coordinate of each slot in [0, 1]


@lru_cache(maxsize=32)
def boundary_slots(n: int) -> BoundarySlots:
    idx = np.arange(n)
    rev = n - 1 - idx
    ring = (
        [(int(m), 0) for m in idx],
        [(n - 1, int(m)) for m in idx],
        [(int(m), n - 1) for m in rev],
        [(0, int(m)) for m in rev],
    )
    ghost = (
        [(int(m), -1) for m in idx],
        [(n, int(m)) for m in idx],
        [(int(m), n) for m in rev],
        [(-1, int(m)) for m in rev],
    )
    h = 1.0 / n
    t_asc = (idx + 0.5) * h
    t_desc = (rev + 0.5) * h
    tvals = np.stack([t_asc, t_asc, t_desc, t_desc])
    return BoundarySlots(n, ring, ghost, tvals)


class Orientation(str, Enum):
    """How a block copy is produced from its representative."""

    ID = "Id"
    TRANSPOSE = "Transpose"
    ROT180 = "Rot180"  # both index orders reversed
    TRANSPOSE_ROT180 = "TransposeRot180"
    FLIP_COLS = "FlipCols"
    FLIP_ROWS = "FlipRows"
    TRANSPOSE_FLIP_COLS = "TransposeFlipCols"


def orient_block(block: np.ndarray, orientation) -> np.ndarray:
    o = Orientation(orientation)
    b = np.asarray(block)
    if o is Orientation.ID:
        return b.copy()
    if o is Orientation.TRANSPOSE:
        return b.T.copy()
    if o is Orientation.ROT180:
        return b[::-1, ::-1].copy()
    if o is Orientation.TRANSPOSE_ROT180:
        return b.T[::-1, ::-1].copy()
    if o is Orientation.FLIP_COLS:
        return b[:, ::-1].copy()
    if o is Orientation.FLIP_ROWS:
        return b[::-1, :].copy()
    if o is Orientation.TRANSPOSE_FLIP_COLS:
        return b.T[:, ::-1].copy()
    raise ValueError(orientation)


@dataclass(frozen=True)
class BlockCopy:
    position: tuple  # (i, j), 1-based block indices
    orientation: Orientation


@dataclass(frozen=True)
class BlockEntry:
    representative: tuple
    copies: tuple  # of BlockCopy, first is the representative itself

    @property
    def multiplicity(self) -> int:
        return len(self.copies)


@dataclass(frozen=True)
class BlockLedger:
    entries: tuple

    def positions(self):
        return [c.position for e in self.entries for c in e.copies]

    def entry_for(self, position):
        for e in self.entries:
            for c in e.copies:
                if c.position == tuple(position):
                    return e, c
        raise KeyError(position)


def ledger_for(medium) -> BlockLedger:
    """Derive the block ledger from the medium's symmetry group.

    Rotations act as the identity on the counter-clockwise slot indexing;
    reflections reverse both slot orders, so copies of a representative are
    one of: itself, its transpose, its 180-degree rotation, or the
    transpose of the rotation.  Unknown symmetry gives 16 singleton blocks.
    """
    from .medium import symmetry_action

    group = medium.symmetry_group()
    if group == ["id"]:
        entries = [
            BlockEntry((i, j), (BlockCopy((i, j), Orientation.ID),))
            for j in range(1, 5)
            for i in range(1, 5)
        ]
        return BlockLedger(tuple(entries))

    reflections = {"flip_v", "flip_h", "flip_d", "flip_a"}
    assigned = {}
    entries = []
    for j in range(1, 5):
        for i in range(1, 5):
            if (i, j) in assigned:
                continue
            copies = [BlockCopy((i, j), Orientation.ID)]
            assigned[(i, j)] = True
            images = []
            for gname in group:
                perm, _ = symmetry_action(gname)
                pos = (perm[i], perm[j])
                orient = Orientation.ROT180 if gname in reflections else Orientation.ID
                images.append((pos, orient))
            # D is symmetric for every medium: add the transposed images
            for pos, orient in list(images):
                tpos = (pos[1], pos[0])
                torient = {
                    Orientation.ID: Orientation.TRANSPOSE,
                    Orientation.ROT180: Orientation.TRANSPOSE_ROT180,
                }[orient]
                images.append((tpos, torient))
            for pos, orient in images:
                if pos not in assigned:
                    assigned[pos] = True
                    copies.append(BlockCopy(pos, orient))
            entries.append(BlockEntry((i, j), tuple(copies)))
    ledger = BlockLedger(tuple(entries))
    assert len(ledger.positions()) == 16
    return ledger


@dataclass(frozen=True)
class DtNMatrix:
    """Discrete exterior DtN map in slot indexing (n = 4N).

    ``data`` is the dense matrix when affordable; ``apply`` is always
    available through the exterior factorization.
    """

    n: int
    grid: GridSpec
    data: np.ndarray | None = None
    solver: "ExteriorDtN | None" = None
    corner_convention: str = "side-major ccw, corners doubled on input, omitted in output"

    def apply(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=np.complex128).reshape(self.n)
        if self.data is not None:
            return self.data @ g
        return self.solver.apply(g)

    def block(self, i: int, j: int) -> np.ndarray:
        if self.data is None:
            raise ValueError("dense data not materialized")
        return block_of(self.data, i, j)


def block_of(dense: np.ndarray, i: int, j: int) -> np.ndarray:
    """(i, j) edge-to-edge block of a dense 4N x 4N DtN matrix, 1-based."""
    n = dense.shape[0] // 4
    return dense[(i - 1) * n : i * n, (j - 1) * n : j * n]


class ExteriorDtN:
    """Exterior solver wrapped as a DtN apply capability.

    One sparse factorization is shared by every apply; instances are
    immutable after construction and safe to use from concurrent readers.
    """

    def __init__(self, medium, grid: GridSpec):
        self.medium = medium
        self.grid = grid
        self.system: SparseSystem = assemble_system(medium, grid, SystemConfig.EXTERIOR)
        self.factored: FactoredSystem = factor(self.system)
        slots = boundary_slots(grid.n)
        geom = self.system.geometry
        self._ghost_ids = np.array(
            [[geom.node_id(i, j) for (i, j) in side] for side in slots.ghost], dtype=np.int64
        ).reshape(-1)
        if np.any(self._ghost_ids < 0):
            raise RuntimeError("ghost ring is not fully inside the exterior unknowns")
        self.solve_count = 0

    @property
    def n(self) -> int:
        return 4 * self.grid.n

    def _solve_ghost(self, rhs_vals: np.ndarray) -> np.ndarray:
        """Solve with rhs supported on the ghost ring; return ghost values."""
        rhs = self.system.zero_rhs()
        rhs[self._ghost_ids] = rhs_vals
        u = self.factored.solve(rhs, check=False).values
        self.solve_count += 1
        return u[self._ghost_ids]

    def apply(self, g) -> np.ndarray:
        """D g = (u1 - g)/h for side-major boundary data g (corner copies equal)."""
        g = np.asarray(g, dtype=np.complex128).reshape(self.n)
        h = self.grid.h
        u1 = self._solve_ghost(-g / h**2)
        return (u1 - g) / h

    def apply_side(self, side: int, z) -> np.ndarray:
        """D applied to data supported on one side (the probing primitive)."""
        n = self.grid.n
        g = np.zeros(self.n, dtype=np.complex128)
        g[(side - 1) * n : side * n] = np.asarray(z, dtype=np.complex128)
        return self.apply(g)

    def dense(self, column_chunk: int = 64) -> np.ndarray:
        """Materialize D by 4N exterior solves reusing the factorization."""
        n4 = self.n
        if self.grid.n > DENSE_N_GUARD:
            raise MemoryError(f"dense DtN guarded to N <= {DENSE_N_GUARD}")
        h = self.grid.h
        out = np.empty((n4, n4), dtype=np.complex128)
        for start in range(0, n4, column_chunk):
            stop = min(start + column_chunk, n4)
            rhs = np.zeros((self.system.dimension, stop - start), dtype=np.complex128)
            rhs[self._ghost_ids[start:stop], np.arange(stop - start)] = -1.0 / h**2
            u = self.factored._lu.solve(rhs)
            self.solve_count += stop - start
            out[:, start:stop] = u[self._ghost_ids, :]
        out -= np.eye(n4)
        out /= h
        return out


def dtn_apply(medium, grid: GridSpec, g) -> np.ndarray:
    """One-shot DtN application; builds and discards a factorization."""
    return ExteriorDtN(medium, grid).apply(g)


def assemble_dense_dtn(medium, grid: GridSpec) -> DtNMatrix:
    """Dense D from 4N exterior solves with standard-basis boundary data."""
    solver = ExteriorDtN(medium, grid)
    return DtNMatrix(solver.n, grid, data=solver.dense(), solver=solver)


def _exterior_matrix_and_ghosts(medium, grid: GridSpec):
    system = assemble_system(medium, grid, SystemConfig.EXTERIOR)
    if system.dimension > ELIMINATION_UNKNOWN_GUARD:
        raise MemoryError(
            f"elimination oracle guarded to {ELIMINATION_UNKNOWN_GUARD} unknowns, got {system.dimension}"
        )
    slots = boundary_slots(grid.n)
    geom = system.geometry
    ghost_ids = np.array(
        [geom.node_id(i, j) for side in slots.ghost for (i, j) in side], dtype=np.int64
    )
    return system, ghost_ids


def _dtn_from_ghost_schur(schur: np.ndarray, h: float) -> np.ndarray:
    """D from the Schur complement S on the ghost ring: D = -S^{-1}/h^3 - I/h.

    S here is the boundary block after eliminating all other exterior
    unknowns; rewriting the reduced boundary relation gives the familiar
    (hD - I)/h^2 form of the boundary block.
    """
    n4 = schur.shape[0]
    sinv = np.linalg.inv(schur)
    return -sinv / h**3 - np.eye(n4) / h


def eliminate_dtn_oracle(medium, grid: GridSpec) -> DtNMatrix:
    """One-pass Schur elimination of every exterior unknown except the ghost ring."""
    system, ghost_ids = _exterior_matrix_and_ghosts(medium, grid)
    dim = system.dimension
    mask = np.zeros(dim, dtype=bool)
    mask[ghost_ids] = True
    other = np.where(~mask)[0]
    a = system.matrix
    a_gg = a[ghost_ids][:, ghost_ids].toarray()
    a_go = a[ghost_ids][:, other]
    a_og = a[other][:, ghost_ids]
    import scipy.sparse.linalg as spla

    lu = spla.splu(a[other][:, other].tocsc())
    schur = a_gg - a_go @ lu.solve(a_og.toarray())
    return DtNMatrix(4 * grid.n, grid, data=_dtn_from_ghost_schur(schur, grid.h))


def _ring_index(nodes: np.ndarray, n: int) -> np.ndarray:
    i = nodes[:, 0]
    j = nodes[:, 1]
    return np.maximum.reduce([-i, i - (n - 1), -j, j - (n - 1)])


def eliminate_dtn_layer_by_layer(medium, grid: GridSpec) -> DtNMatrix:
    """Ring-by-ring Schur peeling from the outermost exterior ring inward."""
    system, ghost_ids = _exterior_matrix_and_ghosts(medium, grid)
    geom = system.geometry
    rings = _ring_index(geom.nodes, grid.n)
    depth = int(rings.max())
    a = system.matrix
    ids_at = {r: np.where(rings == r)[0] for r in range(1, depth + 1)}
    schur = a[ids_at[depth]][:, ids_at[depth]].toarray()
    for r in range(depth - 1, 0, -1):
        inner = ids_at[r]
        outer = ids_at[r + 1]
        a_ii = a[inner][:, inner].toarray()
        a_io = a[inner][:, outer].toarray()
        schur = a_ii - a_io @ np.linalg.solve(schur, a_io.T)
        # five-point coupling between adjacent rings is symmetric, so
        # A[outer, inner] = A[inner, outer]^T exactly
    # The ring-1 block holds the 4N paired ghosts plus the 4 ghost corners;
    # boundary data only loads the paired slots, so D needs the slot
    # submatrix of the inverse (corners eliminated, not discarded).
    ring1 = ids_at[1]
    pos = {int(k): idx for idx, k in enumerate(ring1)}
    perm = np.array([pos[int(k)] for k in ghost_ids])
    sinv = np.linalg.inv(schur)[np.ix_(perm, perm)]
    h = grid.h
    d = -sinv / h**3 - np.eye(4 * grid.n) / h
    return DtNMatrix(4 * grid.n, grid, data=d)


def estimate_frobenius_norm(apply_fn, n: int, probes: int, rng) -> float:
    """Randomized Frobenius estimate: sqrt(mean ||D z||^2), z ~ N(0, I)."""
    total = 0.0
    for _ in range(probes):
        z = rng.standard_normal(n)
        total += float(np.linalg.norm(apply_fn(z)) ** 2)
    return float(np.sqrt(total / probes))


def rebuild_dense_from_ledger(representatives: dict, ledger: BlockLedger, n: int) -> np.ndarray:
    """Tile a dense 4N x 4N matrix from representative blocks and the ledger."""
    out = np.zeros((4 * n, 4 * n), dtype=np.complex128)
    for entry in ledger.entries:
        rep = np.asarray(representatives[entry.representative])
        for copy in entry.copies:
            i, j = copy.position
            out[(i - 1) * n : i * n, (j - 1) * n : j * n] = orient_block(rep, copy.orientation)
    return out


def halfspace_dtn_from_strip(medium, grid: GridSpec) -> np.ndarray:
    """N x N half-space DtN from the strip configuration, one solve per column.

    Dirichlet data lives on the N nodes of the data line; the map returns
    (u1 - g)/h on the strip row just below.  Independent of the
    layer-stripping recursion, which it should match away from the lateral
    layers.
    """
    system = assemble_system(medium, grid, SystemConfig.HALF_STRIP)
    lu = factor(system)
    n, h = grid.n, grid.h
    geom = system.geometry
    row_ids = np.array([geom.node_id(i, -1) for i in range(n)])
    out = np.empty((n, n), dtype=np.complex128)
    for m in range(n):
        rhs = system.zero_rhs()
        rhs[row_ids[m]] = -1.0 / h**2
        u = lu.solve(rhs, check=False).values
        out[:, m] = u[row_ids]
    out -= np.eye(n)
    out /= h
    return out


@dataclass
class LayerStripResult:
    dtn: np.ndarray
    residuals: np.ndarray  # ||D_{k+1} - D_k||_F / ||D_k||_F at monitored steps
    monitor_steps: np.ndarray


def layer_strip_halfspace(
    medium,
    grid: GridSpec,
    depth_layers: int,
    damp_fraction: float = 0.25,
    profile_depth: float = 0.5,
    monitor_every: int = 0,
) -> LayerStripResult:
    """Half-space DtN by the Schur-complement recursion S_{k+1} = M - S_k^{-1}.

    The strip cross-section is the 1-D Helmholtz block with lateral layer
    stretch; the medium is sampled on the line y = -profile_depth (constant
    in depth).  Marching starts from a single layer against zero Dirichlet
    (S_1 = M); the deepest ``damp_fraction`` of the marched layers carry a
    vertical stretch so the recursion settles on the outgoing branch, and
    marching then continues undamped with the fixed-point residual
    monitored every ``monitor_every`` steps.  The returned N x N map
    satisfies (u1 - g)/h = D g on the data line, lateral layers trimmed.
    """
    if depth_layers < 2:
        raise ValueError("need at least 2 layers")
    op = StripOperator(medium, grid, depth_layers, damp_fraction, profile_depth)
    n_damped = op.n_damped
    if monitor_every <= 0:
        monitor_every = max(1, (depth_layers - n_damped) // 32)

    h3 = grid.h**3
    eye = np.eye(op.dim)
    undamped_block = op.cross_block(n_damped + 2)

    schur = op.cross_block(1)
    residuals = []
    steps = []
    prev_d = None
    for k in range(2, depth_layers + 1):
        p = op.coupling(k - 0.5)
        block = undamped_block if k > n_damped + 1 else op.cross_block(k)
        schur = block - (p[:, None] * np.linalg.solve(schur, np.diag(p)))
        monitored = k > n_damped + 1 and (k - n_damped) % monitor_every == 0
        if monitored or k == depth_layers:
            d_now = -np.linalg.inv(schur) / h3 - eye / grid.h
            if prev_d is not None:
                residuals.append(float(np.linalg.norm(d_now - prev_d) / np.linalg.norm(prev_d)))
                steps.append(k)
            prev_d = d_now
    return LayerStripResult(
        dtn=prev_d[op.core, op.core], residuals=np.asarray(residuals), monitor_steps=np.asarray(steps)
    )


class StripOperator:
    """Blocks of the laterally-stretched strip operator, one per layer depth.

    The 1-D cross-section carries the lateral layer stretch; the vertical
    stretch ramps over the deepest ``damp_fraction`` of the marched layers
    and is off afterwards.
    """

    def __init__(self, medium, grid: GridSpec, depth_layers, damp_fraction, profile_depth):
        from .helmholtz import _stretch_1d

        n, h, omega = grid.n, grid.h, grid.omega
        sg, w = grid.strip_gap, grid.pml_width_w
        sigma0 = grid.layer_sigma0
        bx = sg + w
        idx = np.arange(-bx, n + bx)
        x = (idx + 0.5) * h
        self.c = np.asarray(medium.eval_speed(x, np.full_like(x, -profile_depth)))
        self.dim = idx.size
        self.h = h
        self.omega = omega
        self.sigma0 = sigma0
        self.core = slice(bx, bx + n)
        self.sx_node = _stretch_1d(idx.astype(float), -sg - 0.5, n - 1 + sg + 0.5, w, sigma0, omega)
        self.sx_edge = _stretch_1d(idx[:-1] + 0.5, -sg - 0.5, n - 1 + sg + 0.5, w, sigma0, omega)
        self.n_damped = max(1, int(np.ceil(damp_fraction * depth_layers)))

    def sy_at(self, k_pos: float) -> complex:
        t = min(max((self.n_damped - k_pos) / self.n_damped, 0.0), 1.0)
        return 1.0 + 1j * self.sigma0 * t**3 / self.omega

    def cross_block(self, k: int) -> np.ndarray:
        """In-layer block of the symmetrized five-point operator at depth k."""
        h, dim = self.h, self.dim
        syk = self.sy_at(float(k))
        diag_x = np.zeros(dim, dtype=np.complex128)
        diag_x[:-1] -= syk / self.sx_edge
        diag_x[1:] -= syk / self.sx_edge
        main = (
            diag_x / h**2
            - (self.sx_node / self.sy_at(k - 0.5) + self.sx_node / self.sy_at(k + 0.5)) / h**2
            + syk * self.sx_node * self.omega**2 / self.c**2
        )
        m = np.diag(main)
        off = syk / self.sx_edge / h**2
        m[np.arange(dim - 1), np.arange(1, dim)] = off
        m[np.arange(1, dim), np.arange(dim - 1)] = off
        return m

    def coupling(self, k_pos: float) -> np.ndarray:
        """Diagonal of the inter-layer coupling block at half position k_pos."""
        return self.sx_node / self.sy_at(k_pos) / self.h**2
