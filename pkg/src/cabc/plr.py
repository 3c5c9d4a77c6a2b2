"""Partitioned low-rank matrices: adaptive compression and fast matvec.

A PLR matrix is a quadtree over a power-of-two index square; any quadrant
may be subdivided independently of its siblings.  Leaves store a truncated
SVD pair (U * Sigma, V^H).  The split test uses the randomized SVD's
estimate of the (R_max+1)-st singular value against the tolerance, after
which the smallest admissible rank is kept.

The matvec runs over a flattened leaf table; a compiled kernel is used
when the extension module built from ``_plrmv.pyx`` is importable, with a
pure-NumPy fallback selected at import (override with CABC_PURE_PYTHON=1).
"""

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .io import MatrixFormatError, _atomic_write_bytes

try:  # compiled kernel is optional; the fallback is exact, only slower
    if os.environ.get("CABC_PURE_PYTHON"):
        _plrmv = None
    else:
        from . import _plrmv
except ImportError:  # pragma: no cover - depends on build environment
    _plrmv = None

HAVE_COMPILED_KERNEL = _plrmv is not None

__all__ = [
    "PLRLeaf",
    "PLRBranch",
    "PLRMatrix",
    "ApplyOperator",
    "rsvd",
    "plr_compress",
    "plr_matvec",
    "plr_matvec_t",
    "matvec_cost",
    "reference_structure",
    "reference_cost",
    "choose_rmax",
    "plr_write",
    "plr_read",
    "HAVE_COMPILED_KERNEL",
]

_OVERSAMPLING = 10


@dataclass
class PLRLeaf:
    """Compressed block: factors (n_B x R) and (R x n_B), U scaled by sigma."""

    u: np.ndarray
    vh: np.ndarray

    @property
    def size(self) -> int:
        return self.u.shape[0]

    @property
    def rank(self) -> int:
        return self.vh.shape[0]


@dataclass
class PLRBranch:
    """Hierarchical block split into its four half-size children."""

    children: list  # [[nw, ne], [sw, se]]


@dataclass
class ApplyOperator:
    """Matvec + adjoint-matvec capability for operator-backed compression."""

    matvec: callable  # (n, k) -> (n, k)
    rmatvec: callable
    n: int


@dataclass
class PLRMatrix:
    """Quadtree with truncated-SVD leaves over a zero-padded square."""

    root: object
    n: int  # padded power-of-two dimension
    n_orig: int
    r_max: int
    epsilon: float
    _flat: tuple = field(default=None, repr=False, compare=False)
    _flat_t: tuple = field(default=None, repr=False, compare=False)

    def leaves(self):
        out = []

        def walk(node, row0, col0, size, level):
            if isinstance(node, PLRLeaf):
                out.append((row0, col0, size, level, node))
            else:
                half = size // 2
                for bi in range(2):
                    for bj in range(2):
                        walk(node.children[bi][bj], row0 + bi * half, col0 + bj * half, half, level + 1)

        walk(self.root, 0, 0, self.n, 0)
        return out

    def stats(self) -> dict:
        """Per-level leaf counts and rank range; depth and total cost."""
        per_level = {}
        for _, _, size, level, leaf in self.leaves():
            rec = per_level.setdefault(level, {"count": 0, "size": size, "ranks": []})
            rec["count"] += 1
            rec["ranks"].append(leaf.rank)
        summary = {
            lvl: {"count": rec["count"], "size": rec["size"], "max_rank": max(rec["ranks"]), "min_rank": min(rec["ranks"])}
            for lvl, rec in sorted(per_level.items())
        }
        return {"levels": summary, "depth": max(per_level) if per_level else 0, "matvec_cost": matvec_cost(self)}

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n), dtype=np.complex128)
        for row0, col0, size, _, leaf in self.leaves():
            out[row0 : row0 + size, col0 : col0 + size] = leaf.u @ leaf.vh
        return out[: self.n_orig, : self.n_orig]

    def matvec(self, x):
        return plr_matvec(self, x)

    def matvec_t(self, x):
        return plr_matvec_t(self, x)

    def _flatten(self):
        if self._flat is None:
            leaves = self.leaves()
            row0 = np.array([l[0] for l in leaves], dtype=np.int64)
            col0 = np.array([l[1] for l in leaves], dtype=np.int64)
            nb = np.array([l[2] for l in leaves], dtype=np.int64)
            rk = np.array([l[4].rank for l in leaves], dtype=np.int64)
            uoff = np.zeros(len(leaves), dtype=np.int64)
            voff = np.zeros(len(leaves), dtype=np.int64)
            usz = int(np.sum(nb * rk))
            udata = np.empty(usz, dtype=np.complex128)
            vdata = np.empty(usz, dtype=np.complex128)
            pos = 0
            for i, (_, _, size, _, leaf) in enumerate(leaves):
                cnt = size * leaf.rank
                uoff[i] = pos
                voff[i] = pos
                udata[pos : pos + cnt] = np.ascontiguousarray(leaf.u).ravel()
                vdata[pos : pos + cnt] = np.ascontiguousarray(leaf.vh).ravel()
                pos += cnt
            self._flat = (row0, col0, nb, rk, uoff, voff, udata, vdata)
        return self._flat

    def _flatten_t(self):
        """Leaf table of the plain (non-conjugate) transpose."""
        if self._flat_t is None:
            leaves = self.leaves()
            row0 = np.array([l[1] for l in leaves], dtype=np.int64)  # swapped
            col0 = np.array([l[0] for l in leaves], dtype=np.int64)
            nb = np.array([l[2] for l in leaves], dtype=np.int64)
            rk = np.array([l[4].rank for l in leaves], dtype=np.int64)
            uoff = np.zeros(len(leaves), dtype=np.int64)
            voff = np.zeros(len(leaves), dtype=np.int64)
            usz = int(np.sum(nb * rk))
            udata = np.empty(usz, dtype=np.complex128)
            vdata = np.empty(usz, dtype=np.complex128)
            pos = 0
            for i, (_, _, size, _, leaf) in enumerate(leaves):
                cnt = size * leaf.rank
                uoff[i] = pos
                voff[i] = pos
                udata[pos : pos + cnt] = np.ascontiguousarray(leaf.vh.T).ravel()
                vdata[pos : pos + cnt] = np.ascontiguousarray(leaf.u.T).ravel()
                pos += cnt
            self._flat_t = (row0, col0, nb, rk, uoff, voff, udata, vdata)
        return self._flat_t


def _as_operator(m) -> ApplyOperator:
    if isinstance(m, ApplyOperator):
        return m
    a = np.asarray(m, dtype=np.complex128)
    return ApplyOperator(lambda x: a @ x, lambda x: a.conj().T @ x, a.shape[0])


def rsvd(apply, n: int, r_max: int, seed_or_rng) -> tuple:
    """Randomized SVD of rank r_max + 1 with oversampling and one power pass.

    ``apply`` is a dense matrix or an :class:`ApplyOperator`; returns
    (U, sigma, V) with exactly r_max + 1 singular triplets (zero-padded when
    the block is smaller).  sigma[r] estimates the (r+1)-st singular value
    within a factor ~1.5, which is what the compression split test needs.
    """
    rng = np.random.default_rng(seed_or_rng) if not isinstance(seed_or_rng, np.random.Generator) else seed_or_rng
    op = _as_operator(apply)
    want = r_max + 1
    if n <= want + _OVERSAMPLING:
        dense = apply if isinstance(apply, np.ndarray) else op.matvec(np.eye(n, dtype=np.complex128))
        u, s, vh = np.linalg.svd(np.asarray(dense, dtype=np.complex128), full_matrices=False)
    else:
        sketch = rng.standard_normal((n, want + _OVERSAMPLING))
        q, _ = np.linalg.qr(op.matvec(sketch))
        q, _ = np.linalg.qr(op.rmatvec(q))  # one power iteration
        q, _ = np.linalg.qr(op.matvec(q))
        b = op.rmatvec(q).conj().T
        ub, s, vh = np.linalg.svd(b, full_matrices=False)
        u = q @ ub
    if s.size < want:
        pad = want - s.size
        u = np.pad(u, ((0, 0), (0, pad)))
        vh = np.pad(vh, ((0, pad), (0, 0)))
        s = np.pad(s, (0, pad))
    return u[:, :want], s[:want], vh[:want].conj().T


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def _block_operator(op: ApplyOperator, row0: int, col0: int, size: int, total: int) -> ApplyOperator:
    def mv(x):
        xe = np.zeros((total,) + x.shape[1:], dtype=np.complex128)
        xe[col0 : col0 + size] = x
        return op.matvec(xe)[row0 : row0 + size]

    def rmv(x):
        xe = np.zeros((total,) + x.shape[1:], dtype=np.complex128)
        xe[row0 : row0 + size] = x
        return op.rmatvec(xe)[col0 : col0 + size]

    return ApplyOperator(mv, rmv, size)


def plr_compress(m, r_max: int, epsilon: float, seed: int = 0) -> PLRMatrix:
    """Compress a matrix (dense array or ApplyOperator) into PLR form.

    Each block is tested with the randomized SVD: if some rank R <= r_max
    has estimated (R+1)-st singular value below epsilon the block becomes a
    leaf with the smallest such R; otherwise it is split until blocks reach
    r_max, where truncation is forced.  Non-power-of-two input is zero
    padded; padding compresses to rank 0 and costs nothing.
    """
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    op_input = isinstance(m, ApplyOperator)
    n_orig = m.n if op_input else np.asarray(m).shape[0]
    if not op_input:
        m = np.asarray(m, dtype=np.complex128)
        if m.shape[0] != m.shape[1]:
            raise ValueError("PLR compression expects a square matrix")
    n = _next_pow2(n_orig)
    rng = np.random.default_rng(seed)

    def block_target(row0, col0, size):
        """Dense block, or an operator view when fully inside the matrix."""
        inside = row0 + size <= n_orig and col0 + size <= n_orig
        if op_input and inside:
            return _block_operator(m, row0, col0, size, n_orig)
        out = np.zeros((size, size), dtype=np.complex128)
        r1 = min(max(n_orig - row0, 0), size)
        c1 = min(max(n_orig - col0, 0), size)
        if r1 > 0 and c1 > 0:
            if op_input:  # ragged edge block of an operator: pull its columns
                cols = np.zeros((n_orig, c1), dtype=np.complex128)
                cols[col0 : col0 + c1] = np.eye(c1)
                out[:r1, :c1] = m.matvec(cols)[row0 : row0 + r1]
            else:
                out[:r1, :c1] = m[row0 : row0 + r1, col0 : col0 + c1]
        return out

    def build(row0, col0, size):
        target = block_target(row0, col0, size)
        u, s, v = rsvd(target, size, min(r_max, size), rng)
        cut = np.where(s < epsilon)[0]
        if cut.size > 0 and cut[0] <= r_max:
            r = int(cut[0])
            leaf = PLRLeaf(u[:, :r] * s[:r], v[:, :r].conj().T)
            return leaf
        if size <= r_max:
            r = min(size, r_max)
            return PLRLeaf(u[:, :r] * s[:r], v[:, :r].conj().T)
        half = size // 2
        kids = [
            [build(row0, col0, half), build(row0, col0 + half, half)],
            [build(row0 + half, col0, half), build(row0 + half, col0 + half, half)],
        ]
        return PLRBranch(kids)

    root = build(0, 0, n)
    return PLRMatrix(root=root, n=n, n_orig=n_orig, r_max=r_max, epsilon=float(epsilon))


def _matvec_python(flat, x, y):
    row0, col0, nb, rk, uoff, voff, udata, vdata = flat
    for i in range(row0.size):
        r = rk[i]
        if r == 0:
            continue
        s = nb[i]
        vh = vdata[voff[i] : voff[i] + r * s].reshape(r, s)
        u = udata[uoff[i] : uoff[i] + s * r].reshape(s, r)
        y[row0[i] : row0[i] + s] += u @ (vh @ x[col0[i] : col0[i] + s])


def _run_flat(h: PLRMatrix, flat, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    single = x.ndim == 1
    if x.shape[0] != h.n_orig:
        raise ValueError(f"expected length {h.n_orig}, got {x.shape[0]}")
    cols = 1 if single else x.shape[1]
    xp = np.zeros((h.n, cols), dtype=np.complex128)
    xp[: h.n_orig] = x.reshape(h.n_orig, cols)
    yp = np.zeros((h.n, cols), dtype=np.complex128)
    if _plrmv is not None:
        _plrmv.flat_matvec(*flat, xp, yp)
    else:
        for c in range(cols):
            _matvec_python(flat, xp[:, c], yp[:, c])
    y = yp[: h.n_orig]
    return y[:, 0] if single else y


def plr_matvec(h: PLRMatrix, x) -> np.ndarray:
    """y = H x, exactly the matvec of the leaf-reconstructed dense matrix."""
    return _run_flat(h, h._flatten(), x)


def plr_matvec_t(h: PLRMatrix, x) -> np.ndarray:
    """y = H^T x (plain transpose; used when applying oriented block copies)."""
    return _run_flat(h, h._flatten_t(), x)


def matvec_cost(h: PLRMatrix) -> int:
    """Exact operation count of the fast matvec: sum of 4 n_B R_B over leaves."""
    return int(sum(4 * size * leaf.rank for _, _, size, _, leaf in h.leaves()))


def _skeleton_leaf(size: int, rank: int) -> PLRLeaf:
    return PLRLeaf(np.zeros((size, rank), dtype=np.complex128), np.zeros((rank, size), dtype=np.complex128))


def reference_structure(kind: str, n: int, r_max: int) -> PLRMatrix:
    """Synthetic full-rank tree realizing a named structure definition.

    weak: compressed iff row and column ranges do not overlap;
    strong: compressed iff ranges are separated by at least the block width;
    corner: divided iff the block contains the top-right entry (0, n-1).
    """
    kind = kind.lower()
    if kind not in ("weak", "strong", "corner"):
        raise ValueError(kind)
    ratio = n // max(r_max, 1)
    if r_max * ratio != n or ratio < 2 or (ratio & (ratio - 1)) != 0:
        raise ValueError("n / r_max must be a power of two >= 2")

    def build(row0, col0, size):
        disjoint = row0 + size <= col0 or col0 + size <= row0
        if kind == "weak":
            split = not disjoint and size > r_max
        elif kind == "strong":
            gap = max(col0 - (row0 + size - 1), row0 - (col0 + size - 1), 0)
            separated = disjoint and gap >= size
            split = not separated and size > r_max
        else:
            has_corner = row0 == 0 and col0 + size == n
            split = has_corner and size > r_max
        if not split:
            return _skeleton_leaf(size, min(r_max, size))
        half = size // 2
        return PLRBranch(
            [
                [build(row0, col0, half), build(row0, col0 + half, half)],
                [build(row0 + half, col0, half), build(row0 + half, col0 + half, half)],
            ]
        )

    return PLRMatrix(root=build(0, 0, n), n=n, n_orig=n, r_max=r_max, epsilon=0.0)


def reference_cost(kind: str, n: int, r_max: int) -> int:
    """Closed-form exact matvec cost of the reference structures.

    These are the exact leaf-count sums; the corner headline constant in
    the complexity discussion rounds 12 n R - 8 R^2 down to 8 n R.
    """
    kind = kind.lower()
    levels = int(np.log2(n // r_max))
    if kind == "weak":
        return 4 * n * r_max * (levels + 1)
    if kind == "strong":
        return 12 * n * r_max * (levels - 1) + 16 * r_max * r_max
    if kind == "corner":
        return 12 * n * r_max - 8 * r_max * r_max
    raise ValueError(kind)


def choose_rmax(m, epsilon: float, candidates=(1, 2, 4, 8, 16, 32), seed: int = 0):
    """Compress at each candidate max rank and keep the cheapest matvec.

    Ties break toward the smaller rank.  Returns (r_max, PLRMatrix, costs).
    """
    n = m.n if isinstance(m, ApplyOperator) else np.asarray(m).shape[0]
    costs = {}
    best = None
    for r in candidates:
        if r > n:
            continue
        h = plr_compress(m, r, epsilon, seed=seed)
        costs[r] = matvec_cost(h)
        if best is None or costs[r] < costs[best[0]]:
            best = (r, h)
    return best[0], best[1], costs


_PLR_MAGIC = b"CABCPLR1"


def plr_write(path, h: PLRMatrix) -> None:
    """Serialize preorder: node tags, leaf (n_B, R) headers, factor payloads."""
    chunks = [_PLR_MAGIC, struct.pack("<IIId", h.n, h.n_orig, h.r_max, h.epsilon)]

    def emit(node):
        if isinstance(node, PLRLeaf):
            chunks.append(struct.pack("<BII", 1, node.size, node.rank))
            for a in (node.u, node.vh):
                buf = np.empty(a.shape + (2,), dtype="<f8")
                buf[..., 0] = a.real
                buf[..., 1] = a.imag
                chunks.append(buf.tobytes())
        else:
            chunks.append(struct.pack("<B", 0))
            for bi in range(2):
                for bj in range(2):
                    emit(node.children[bi][bj])

    emit(h.root)
    _atomic_write_bytes(path, b"".join(chunks))


def plr_read(path) -> PLRMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(_PLR_MAGIC)] != _PLR_MAGIC:
        raise MatrixFormatError(f"{path}: bad PLR magic")
    n, n_orig, r_max, epsilon = struct.unpack_from("<IIId", blob, len(_PLR_MAGIC))
    pos = len(_PLR_MAGIC) + struct.calcsize("<IIId")

    def parse():
        nonlocal pos
        (tag,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        if tag == 1:
            size, rank = struct.unpack_from("<II", blob, pos)
            pos += 8
            cnt = size * rank
            raw = np.frombuffer(blob, dtype="<f8", count=4 * cnt, offset=pos)
            pos += 32 * cnt
            u = (raw[: 2 * cnt : 2] + 1j * raw[1 : 2 * cnt : 2]).reshape(size, rank)
            vh = (raw[2 * cnt :: 2] + 1j * raw[2 * cnt + 1 :: 2]).reshape(rank, size)
            return PLRLeaf(u.copy(), vh.copy())
        if tag != 0:
            raise MatrixFormatError(f"{path}: bad node tag {tag}")
        return PLRBranch([[parse(), parse()], [parse(), parse()]])

    root = parse()
    if pos != len(blob):
        raise MatrixFormatError(f"{path}: trailing bytes")
    return PLRMatrix(root=root, n=n, n_orig=n_orig, r_max=r_max, epsilon=epsilon)
