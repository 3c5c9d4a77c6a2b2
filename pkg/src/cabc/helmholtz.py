"""Five-point Helmholtz systems with pseudo-PML layers.

Grid nodes are cell-centered at ((i+1/2)h, (j+1/2)h), so every square
symmetry of the medium is an exact lattice symmetry.  Three configurations
share one assembler: the interior box (with or without a surrounding
layer), the exterior annulus used to build the DtN map, and the half-space
strip.  The layer stretch is assembled in flux form, which keeps the matrix
complex symmetric; row scaling by the stretch factors leaves the solution
unchanged.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "GridSpec",
    "SystemConfig",
    "SparseSystem",
    "Field",
    "FactoredSystem",
    "SingularSystemError",
    "pml_sigma",
    "assemble_system",
    "factor",
    "factor_solve",
]


class SingularSystemError(Exception):
    """Factorization hit a (near-)singular matrix."""


class SystemConfig(str, Enum):
    INTERIOR = "Interior"
    EXTERIOR = "Exterior"
    HALF_STRIP = "HalfStrip"


@dataclass(frozen=True)
class GridSpec:
    """Discretization of the unit box: N nodes per dimension, h = 1/N.

    ``pml_width_w`` and ``strip_gap`` are in grid cells; ``sigma0`` overrides
    the default layer amplitude 40*omega/w; ``strip_depth`` is the number of
    unstretched rows below the data line in the half-strip configuration.
    """

    n: int
    omega: float
    pml_width_w: int = 8
    strip_gap: int = 2
    sigma0: float | None = None
    strip_depth: int = 2

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least 2 nodes per dimension")
        if self.pml_width_w < 1:
            raise ValueError("pml_width_w must be >= 1")
        if self.strip_gap < 1:
            raise ValueError("strip_gap must be >= 1")
        if self.omega <= 0:
            raise ValueError("omega must be positive")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def layer_sigma0(self) -> float:
        if self.sigma0 is not None:
            return self.sigma0
        return 40.0 * self.omega / self.pml_width_w


def pml_sigma(depth_fraction: float, sigma0: float = 1.0):
    """Cubic damping profile: 0 at the interface, sigma0 at the outer edge."""
    t = np.asarray(depth_fraction, dtype=float)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("depth fraction must lie in [0, 1]")
    return sigma0 * t**3


@dataclass(frozen=True)
class _BoxGeometry:
    """Index bookkeeping for one assembled configuration.

    Unknown nodes live on the integer lattice; ``ids`` maps (i - ilo,
    j - jlo) to the flat unknown index or -1.
    """

    config: SystemConfig
    n: int
    ilo: int
    ihi: int
    jlo: int
    jhi: int
    ids: np.ndarray
    nodes: np.ndarray  # (dim, 2) int array of (i, j) per unknown

    @property
    def dim(self) -> int:
        return self.nodes.shape[0]

    def node_id(self, i: int, j: int) -> int:
        if self.ilo <= i <= self.ihi and self.jlo <= j <= self.jhi:
            return int(self.ids[i - self.ilo, j - self.jlo])
        return -1


@dataclass(frozen=True)
class SparseSystem:
    """Assembled complex system A u = b with its geometry handle."""

    config: SystemConfig
    grid: GridSpec
    geometry: _BoxGeometry
    matrix: sp.csc_matrix
    dirichlet_ring: bool = False

    @property
    def dimension(self) -> int:
        return self.geometry.dim

    def zero_rhs(self) -> np.ndarray:
        return np.zeros(self.dimension, dtype=np.complex128)


@dataclass(frozen=True)
class Field:
    """Solution values indexed like the system's unknown nodes."""

    values: np.ndarray
    system: SparseSystem

    def at_node(self, i: int, j: int) -> complex:
        k = self.system.geometry.node_id(i, j)
        if k < 0:
            raise KeyError(f"({i}, {j}) is not an unknown of this system")
        return self.values[k]


def _stretch_1d(u, start_lo, start_hi, w, sigma0, omega):
    """Complex stretch factor s = 1 + i sigma/omega at continuous index u."""
    u = np.asarray(u, dtype=float)
    t = np.clip((u - start_hi) / w, 0.0, 1.0) + np.clip((start_lo - u) / w, 0.0, 1.0)
    return 1.0 + 1j * pml_sigma(np.clip(t, 0.0, 1.0), sigma0) / omega


def _geometry(grid: GridSpec, config: SystemConfig, has_dirichlet: bool) -> _BoxGeometry:
    n, sg, w = grid.n, grid.strip_gap, grid.pml_width_w
    if config is SystemConfig.INTERIOR:
        if has_dirichlet:
            ilo = jlo = -1
            ihi = jhi = n
        else:
            b = sg + w
            ilo = jlo = -b
            ihi = jhi = n - 1 + b
        mask = np.ones((ihi - ilo + 1, jhi - jlo + 1), dtype=bool)
    elif config is SystemConfig.EXTERIOR:
        b = sg + w
        ilo = jlo = -b
        ihi = jhi = n - 1 + b
        mask = np.ones((ihi - ilo + 1, jhi - jlo + 1), dtype=bool)
        mask[-ilo : n - ilo, -jlo : n - jlo] = False  # interior core is not unknown
    elif config is SystemConfig.HALF_STRIP:
        bx = sg + w
        ilo = -bx
        ihi = n - 1 + bx
        jlo = -(grid.strip_depth + w)
        jhi = -1
        mask = np.ones((ihi - ilo + 1, jhi - jlo + 1), dtype=bool)
    else:
        raise ValueError(config)
    ids = -np.ones(mask.shape, dtype=np.int64)
    order = np.argwhere(mask)
    ids[mask] = np.arange(order.shape[0])
    nodes = order + np.array([ilo, jlo])
    geom = _BoxGeometry(config, n, ilo, ihi, jlo, jhi, ids, nodes)
    if geom.dim < 1:
        raise ValueError("configuration has no unknowns")
    return geom


def _stretches(grid: GridSpec, config: SystemConfig, has_dirichlet: bool):
    """Per-direction stretch callables s_x(u), s_y(u) for this configuration."""
    n, sg, w = grid.n, grid.strip_gap, grid.pml_width_w
    omega, sigma0 = grid.omega, grid.layer_sigma0
    unstretched = lambda u: np.ones_like(np.asarray(u, dtype=float), dtype=complex)
    if config is SystemConfig.INTERIOR and has_dirichlet:
        return unstretched, unstretched
    lo, hi = -sg - 0.5, n - 1 + sg + 0.5
    sx = lambda u: _stretch_1d(u, lo, hi, w, sigma0, omega)
    if config is SystemConfig.HALF_STRIP:
        ylo = -grid.strip_depth - 0.5
        sy = lambda u: _stretch_1d(u, ylo, np.inf, w, sigma0, omega)
    else:
        sy = lambda u: _stretch_1d(u, lo, hi, w, sigma0, omega)
    return sx, sy


def assemble_system(medium, grid: GridSpec, config, dirichlet_ring: bool = False) -> SparseSystem:
    """Assemble the five-point system for one configuration.

    For INTERIOR with ``dirichlet_ring`` the outer ring rows are identity
    (boundary values supplied through :func:`dirichlet_rhs`); otherwise the
    interior box is padded with the absorbing layer.  EXTERIOR and
    HALF_STRIP always couple to boundary data through the rhs.
    """
    config = SystemConfig(config)
    has_dirichlet = bool(dirichlet_ring) and config is SystemConfig.INTERIOR
    geom = _geometry(grid, config, has_dirichlet)
    sx, sy = _stretches(grid, config, has_dirichlet)
    h2 = grid.h * grid.h
    n = grid.n

    ii = geom.nodes[:, 0].astype(float)
    jj = geom.nodes[:, 1].astype(float)
    x = (ii + 0.5) * grid.h
    y = (jj + 0.5) * grid.h
    c = np.asarray(medium.eval_speed(x, y), dtype=float)
    sxi = sx(ii)
    syj = sy(jj)

    identity_rows = np.zeros(geom.dim, dtype=bool)
    if has_dirichlet:
        ring = (geom.nodes[:, 0] == -1) | (geom.nodes[:, 0] == n) | (geom.nodes[:, 1] == -1) | (geom.nodes[:, 1] == n)
        identity_rows[ring] = True

    rows = []
    cols = []
    vals = []
    diag = np.zeros(geom.dim, dtype=np.complex128)
    idx = np.arange(geom.dim)

    interior_rows = ~identity_rows
    diag[interior_rows] = (sxi * syj * (grid.omega**2) / c**2)[interior_rows]
    diag[identity_rows] = 1.0

    # edge coefficients: +x, -x, +y, -y
    for di, dj, s_edge in (
        (1, 0, syj / sx(ii + 0.5)),
        (-1, 0, syj / sx(ii - 0.5)),
        (0, 1, sxi / sy(jj + 0.5)),
        (0, -1, sxi / sy(jj - 0.5)),
    ):
        coef = s_edge / h2
        ni = geom.nodes[:, 0] + di
        nj = geom.nodes[:, 1] + dj
        inside = (ni >= geom.ilo) & (ni <= geom.ihi) & (nj >= geom.jlo) & (nj <= geom.jhi)
        nid = np.full(geom.dim, -1, dtype=np.int64)
        nid[inside] = geom.ids[ni[inside] - geom.ilo, nj[inside] - geom.jlo]
        link = (nid >= 0) & interior_rows
        rows.append(idx[link])
        cols.append(nid[link])
        vals.append(coef[link])
        diag[interior_rows] -= coef[interior_rows]

    rows.append(idx)
    cols.append(idx)
    vals.append(diag)
    a = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(geom.dim, geom.dim),
        dtype=np.complex128,
    ).tocsc()
    return SparseSystem(config, grid, geom, a, dirichlet_ring=has_dirichlet)


def dirichlet_rhs(system: SparseSystem, values) -> np.ndarray:
    """Rhs vector for boundary data.

    EXTERIOR takes side-major slot data of shape (4, N) (see
    :mod:`cabc.dtn` for the corner convention); HALF_STRIP takes N values on
    the data line; INTERIOR with a Dirichlet ring takes a callable g(x, y)
    or an array over the ring nodes in geometry order.
    """
    geom = system.geometry
    grid = system.grid
    n = grid.n
    h2 = grid.h * grid.h
    rhs = system.zero_rhs()
    if system.config is SystemConfig.EXTERIOR:
        g = np.asarray(values, dtype=np.complex128).reshape(4, n)
        from .dtn import boundary_slots  # local import to avoid a cycle

        slots = boundary_slots(n)
        for s in range(4):
            for m in range(n):
                gi, gj = slots.ghost[s][m]
                k = geom.node_id(gi, gj)
                rhs[k] -= g[s, m] / h2
        return rhs
    if system.config is SystemConfig.HALF_STRIP:
        g = np.asarray(values, dtype=np.complex128)
        if g.shape != (n,):
            raise ValueError(f"half-strip data must have shape ({n},)")
        for m in range(n):
            k = geom.node_id(m, -1)
            rhs[k] -= g[m] / h2
        return rhs
    if system.config is SystemConfig.INTERIOR:
        if not system.dirichlet_ring:
            raise ValueError("interior system was assembled without a Dirichlet ring")
        ring = (
            (geom.nodes[:, 0] == -1)
            | (geom.nodes[:, 0] == n)
            | (geom.nodes[:, 1] == -1)
            | (geom.nodes[:, 1] == n)
        )
        if callable(values):
            x = (geom.nodes[ring, 0] + 0.5) * grid.h
            y = (geom.nodes[ring, 1] + 0.5) * grid.h
            rhs[ring] = values(x, y)
        else:
            rhs[ring] = np.asarray(values, dtype=np.complex128)
        return rhs
    raise ValueError(system.config)


def source_rhs(system: SparseSystem, f) -> np.ndarray:
    """Rhs for a body source: callable f(x, y) or array over unknown nodes.

    The layer stretch multiplies the source rows exactly as it does the
    operator rows, so callers supply the plain f.  Dirichlet (identity)
    rows receive no source contribution.
    """
    geom = system.geometry
    grid = system.grid
    x = (geom.nodes[:, 0] + 0.5) * grid.h
    y = (geom.nodes[:, 1] + 0.5) * grid.h
    fv = f(x, y) if callable(f) else np.asarray(f, dtype=np.complex128)
    sx, sy = _stretches(grid, system.config, system.dirichlet_ring)
    out = np.asarray(fv, dtype=np.complex128) * (
        sx(geom.nodes[:, 0].astype(float)) * sy(geom.nodes[:, 1].astype(float))
    )
    if system.dirichlet_ring:
        n = grid.n
        ring = (
            (geom.nodes[:, 0] == -1)
            | (geom.nodes[:, 0] == n)
            | (geom.nodes[:, 1] == -1)
            | (geom.nodes[:, 1] == n)
        )
        out[ring] = 0.0
    return out


class FactoredSystem:
    """Reusable sparse LU factorization; immutable once built."""

    def __init__(self, system: SparseSystem):
        self.system = system
        try:
            self._lu = spla.splu(system.matrix)
        except RuntimeError as exc:  # SuperLU signals exact singularity this way
            raise SingularSystemError(str(exc)) from exc
        if not np.all(np.isfinite(self._lu.U.diagonal())):
            raise SingularSystemError("non-finite pivots in factorization")
        umin = np.abs(self._lu.U.diagonal()).min()
        scale = abs(system.matrix).max()
        if umin < 1e-14 * scale:
            raise SingularSystemError(f"pivot {umin:.3e} below 1e-14 * ||A|| = {1e-14 * scale:.3e}")

    def solve(self, rhs, check: bool = True) -> Field:
        rhs = np.asarray(rhs, dtype=np.complex128)
        u = self._lu.solve(rhs)
        if check:
            bnorm = np.linalg.norm(rhs)
            if bnorm > 0:
                res = np.linalg.norm(self.system.matrix @ u - rhs) / bnorm
                if res > 1e-10:
                    raise SingularSystemError(f"relative residual {res:.3e} exceeds 1e-10")
        return Field(u, self.system)


def factor(system: SparseSystem) -> FactoredSystem:
    return FactoredSystem(system)


def factor_solve(system: SparseSystem, rhs) -> Field:
    """One-shot solve; for repeated rhs keep the :class:`FactoredSystem`."""
    return factor(system).solve(rhs)
