"""Benchmark velocity fields and interfacial traveltimes along the box edges.

The fields extend smoothly outside the unit box (no clamping), so the same
formula serves the interior, the exterior annulus, and the absorbing layer.
Each kind declares the subgroup of the square's symmetries that fixes it;
the DtN block ledger is derived from that subgroup.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "MediumKind",
    "Medium",
    "EdgeCoordinate",
    "TraveltimeKind",
    "SQUARE_SYMMETRIES",
    "symmetry_action",
    "side_point",
    "traveltime",
    "edge_cumulative_slowness",
]


class MediumKind(str, Enum):
    UNIFORM = "Uniform"
    WAVEGUIDE = "Waveguide"
    SLOW_DISK = "SlowDisk"
    VERTICAL_FAULT = "VerticalFault"
    DIAGONAL_FAULT = "DiagonalFault"
    PERIODIC = "Periodic"
    FOCUSING_LINEAR = "FocusingLinear"
    DEFOCUSING_ARCTAN = "DefocusingArctan"


class TraveltimeKind(str, Enum):
    T1 = "T1"
    T2 = "T2"
    T3 = "T3"
    T4 = "T4"
    T5 = "T5"


# Symmetries of the unit square as maps (x1, x2) -> (x1', x2') and the
# induced permutation of the sides 1=bottom, 2=right, 3=top, 4=left.
SQUARE_SYMMETRIES = {
    "id": (lambda x, y: (x, y), {1: 1, 2: 2, 3: 3, 4: 4}),
    "rot90": (lambda x, y: (1.0 - y, x), {1: 2, 2: 3, 3: 4, 4: 1}),
    "rot180": (lambda x, y: (1.0 - x, 1.0 - y), {1: 3, 2: 4, 3: 1, 4: 2}),
    "rot270": (lambda x, y: (y, 1.0 - x), {1: 4, 2: 1, 3: 2, 4: 3}),
    "flip_v": (lambda x, y: (1.0 - x, y), {1: 1, 2: 4, 3: 3, 4: 2}),
    "flip_h": (lambda x, y: (x, 1.0 - y), {1: 3, 2: 2, 3: 1, 4: 4}),
    "flip_d": (lambda x, y: (y, x), {1: 4, 2: 3, 3: 2, 4: 1}),
    "flip_a": (lambda x, y: (1.0 - y, 1.0 - x), {1: 2, 2: 1, 3: 4, 4: 3}),
}

# Whether the natural coordinate of each side is reversed under the map,
# as {name: {side: reversed}}; side dependent for rotations and flips.
_COORD_REVERSED = {
    "id": {1: False, 2: False, 3: False, 4: False},
    "rot90": {1: False, 2: True, 3: False, 4: True},
    "rot180": {1: True, 2: True, 3: True, 4: True},
    "rot270": {1: True, 2: False, 3: True, 4: False},
    "flip_v": {1: True, 2: False, 3: True, 4: False},
    "flip_h": {1: False, 2: True, 3: False, 4: True},
    "flip_d": {1: False, 2: False, 3: False, 4: False},
    "flip_a": {1: True, 2: True, 3: True, 4: True},
}

_FULL_GROUP = ["id", "rot90", "rot180", "rot270", "flip_v", "flip_h", "flip_d", "flip_a"]

_GROUPS = {
    MediumKind.UNIFORM: _FULL_GROUP,
    MediumKind.SLOW_DISK: _FULL_GROUP,
    MediumKind.PERIODIC: _FULL_GROUP,
    MediumKind.WAVEGUIDE: ["id", "rot180", "flip_v", "flip_h"],
    MediumKind.FOCUSING_LINEAR: ["id", "rot180", "flip_v", "flip_h"],
    MediumKind.VERTICAL_FAULT: ["id", "flip_h"],
    MediumKind.DEFOCUSING_ARCTAN: ["id", "flip_v"],
    MediumKind.DIAGONAL_FAULT: ["id", "flip_a"],
}


@dataclass(frozen=True)
class Medium:
    """Velocity field c(x) with symmetry metadata.

    ``params`` overrides the kind's default shape parameters; all benchmark
    kinds are usable with no parameters at all.
    """

    kind: MediumKind
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", MediumKind(self.kind))

    def _p(self, name, default):
        return self.params.get(name, default)

    def eval_speed(self, x1, x2):
        """c at points (x1, x2); broadcasts over array input, always > 0."""
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        k = self.kind
        if k is MediumKind.UNIFORM:
            return np.broadcast_to(np.float64(self._p("value", 1.0)), np.broadcast_shapes(x1.shape, x2.shape)).copy()
        if k is MediumKind.WAVEGUIDE:
            depth = self._p("depth", 0.4)
            width = self._p("width", 0.15)
            return 1.0 - depth * np.exp(-(((x1 - 0.5) / width) ** 2))
        if k is MediumKind.SLOW_DISK:
            contrast = self._p("contrast", 0.6)
            radius = self._p("radius", 0.8)
            r2 = (x1 - 0.5) ** 2 + (x2 - 0.5) ** 2
            return 1.0 + contrast * (1.0 - np.exp(-r2 / radius**2))
        if k is MediumKind.VERTICAL_FAULT:
            c_left = self._p("c_left", 1.0)
            c_right = self._p("c_right", 0.5)
            return np.where(x1 < 0.5, c_left, c_right)
        if k is MediumKind.DIAGONAL_FAULT:
            c_left = self._p("c_left", 1.0)
            c_right = self._p("c_right", 0.5)
            offset = self._p("offset", 0.25)
            return np.where(x1 - x2 < offset, c_left, c_right)
        if k is MediumKind.PERIODIC:
            hole = self._p("c_hole", 1.0)
            background = self._p("c_background", 1.0 / np.sqrt(12.0))
            # square holes of side 1/8 on a 1/4 lattice, centers at odd
            # multiples of 1/8, symmetric about the box center
            d1 = 0.125 - np.abs(np.mod(x1 - 0.125, 0.25) - 0.125)
            d2 = 0.125 - np.abs(np.mod(x2 - 0.125, 0.25) - 0.125)
            inside = (d1 <= 0.0625) & (d2 <= 0.0625)
            return np.where(inside, hole, background)
        if k is MediumKind.FOCUSING_LINEAR:
            return 0.5 + np.abs(x2 - 0.5) + 0.0 * x1
        if k is MediumKind.DEFOCUSING_ARCTAN:
            return 1.0 + np.arctan(4.0 * (x2 - 0.5)) / np.pi + 0.0 * x1
        raise ValueError(f"unknown medium kind {k}")

    def symmetry_group(self):
        """Names of the square symmetries that fix this medium."""
        return list(_GROUPS.get(self.kind, ["id"]))

    def edge_discontinuities(self, side: int):
        """Coordinates t in (0,1) where c jumps along the given edge."""
        if self.kind is MediumKind.VERTICAL_FAULT:
            return [0.5] if side in (1, 3) else []
        if self.kind is MediumKind.DIAGONAL_FAULT:
            offset = self._p("offset", 0.25)
            if side == 1 and 0.0 < offset < 1.0:
                return [offset]
            if side == 2 and 0.0 < 1.0 - offset < 1.0:
                return [1.0 - offset]
            return []
        return []


def symmetry_action(name: str):
    """Side permutation and per-side coordinate reversal of a symmetry."""
    _, perm = SQUARE_SYMMETRIES[name]
    return perm, _COORD_REVERSED[name]


@dataclass(frozen=True)
class EdgeCoordinate:
    """A point on the box boundary: side 1..4 (ccw from the bottom), t in [0, 1]."""

    side: int
    t: float

    def __post_init__(self):
        if self.side not in (1, 2, 3, 4):
            raise ValueError(f"side must be 1..4, got {self.side}")
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"edge coordinate must lie in [0, 1], got {self.t}")

    def point(self):
        x, y = side_point(self.side, self.t)
        return float(x), float(y)


def side_point(side: int, t):
    """Map edge coordinate t in [0,1] on side 1..4 to a point in the plane.

    Sides are numbered counter-clockwise from the bottom edge; t is the
    side's natural coordinate (x along bottom/top, y along left/right).
    """
    t = np.asarray(t, dtype=float)
    if side == 1:
        return t, np.zeros_like(t)
    if side == 2:
        return np.ones_like(t), t
    if side == 3:
        return t, np.ones_like(t)
    if side == 4:
        return np.zeros_like(t), t
    raise ValueError(f"side must be 1..4, got {side}")


def _edge_slowness(medium: Medium, side: int, t):
    x1, x2 = side_point(side, t)
    return 1.0 / medium.eval_speed(x1, x2)


def _simpson_integral(medium: Medium, side: int, a: float, b: float, nsub: int) -> float:
    """Composite Simpson for the edge slowness integral from a to b, a <= b."""
    if b <= a:
        return 0.0
    n = max(2, 2 * int(np.ceil(nsub * (b - a) / 2.0)))
    t = np.linspace(a, b, n + 1)
    f = _edge_slowness(medium, side, t)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((b - a) / (3.0 * n) * (w * f).sum())


def edge_cumulative_slowness(medium: Medium, side: int, ts, nsub: int = 512):
    """Cumulative slowness S(t) = int_0^t 1/c along the edge, per query point.

    Each value is an independent composite Simpson on [0, t], so differences
    S(y) - S(x) are exactly antisymmetric in (x, y).
    """
    return np.array([_simpson_integral(medium, side, 0.0, float(t), nsub) for t in np.atleast_1d(ts)])


def traveltime(medium: Medium, side: int, x: float, y: float, kind=TraveltimeKind.T1, nsub: int = 512) -> float:
    """Interfacial traveltime between edge coordinates x and y on one side.

    T1 is the direct path; T2/T3 bounce once off the nearer/farther corner;
    T4/T5 wrap around both corners.  All are symmetric in (x, y).
    """
    kind = TraveltimeKind(kind)
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise ValueError("edge coordinates must lie in [0, 1]")
    a, b = (x, y) if x <= y else (y, x)
    tau1 = _simpson_integral(medium, side, a, b, nsub)
    if kind is TraveltimeKind.T1:
        return tau1
    left = _simpson_integral(medium, side, 0.0, a, nsub)
    right = _simpson_integral(medium, side, b, 1.0, nsub)
    full = left + tau1 + right
    if not np.isfinite(full):
        raise ValueError("edge slowness integral is not finite")
    if kind is TraveltimeKind.T2:
        return tau1 + 2.0 * min(left, right)
    if kind is TraveltimeKind.T3:
        return tau1 + 2.0 * max(left, right)
    if kind is TraveltimeKind.T4:
        return 2.0 * full - tau1
    return 2.0 * full + tau1
