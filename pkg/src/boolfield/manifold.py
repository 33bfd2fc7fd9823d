"""Toroidal lattice geometry: coordinates, wrap distances, neighborhoods
and Gray-coded position codes."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, UsageError

VON_NEUMANN4 = "von_neumann4"
MOORE8 = "moore8"
RADIUS = "radius"
MANHATTAN = "manhattan"
CHEBYSHEV = "chebyshev"


@dataclass(frozen=True)
class TorusGrid:
    height: int
    width: int

    def __post_init__(self):
        if int(self.height) < 1 or int(self.width) < 1:
            raise ConfigError(f"grid must be at least 1x1, got {self.height}x{self.width}")

    @property
    def shape(self):
        return (self.height, self.width)

    def wrap(self, p):
        return (p[0] % self.height, p[1] % self.width)

    def check(self, p):
        if not (0 <= p[0] < self.height and 0 <= p[1] < self.width):
            raise UsageError(f"coordinate {tuple(p)} outside {self.height}x{self.width} grid")


@dataclass(frozen=True)
class Neighborhood:
    """Neighborhood shape.

    ``kind`` is one of ``"von_neumann4"``, ``"moore8"`` or ``"radius"``; the
    radius kind uses ``radius`` and ``metric`` (``"manhattan"`` or
    ``"chebyshev"``).
    """

    kind: str = MOORE8
    radius: int = 1
    metric: str = CHEBYSHEV
    include_center: bool = False

    def __post_init__(self):
        if self.kind not in (VON_NEUMANN4, MOORE8, RADIUS):
            raise ConfigError(f"unknown neighborhood kind {self.kind!r}")
        if self.metric not in (MANHATTAN, CHEBYSHEV):
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.kind == RADIUS and self.radius < 1:
            raise ConfigError("radius must be positive")

    @property
    def bound(self):
        if self.kind == VON_NEUMANN4:
            return 1, MANHATTAN
        if self.kind == MOORE8:
            return 1, CHEBYSHEV
        return self.radius, self.metric

    def offsets(self, grid: TorusGrid):
        return neighbor_offsets(grid.height, grid.width, self)

    def size(self, grid: TorusGrid):
        return len(self.offsets(grid))

    def to_dict(self):
        return {"kind": self.kind, "radius": self.radius, "metric": self.metric,
                "include_center": self.include_center}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], radius=int(d.get("radius", 1)),
                   metric=d.get("metric", CHEBYSHEV),
                   include_center=bool(d.get("include_center", False)))


def _axis_distance(delta, period):
    delta = abs(delta) % period
    return min(delta, period - delta)


def _metric(dy, dx, metric):
    return dy + dx if metric == MANHATTAN else max(dy, dx)


@lru_cache(maxsize=256)
def neighbor_offsets(height, width, nb: Neighborhood):
    """Offsets of ``nb`` on a ``height x width`` torus, row-major.

    Offsets beyond half the period on an axis are not representable and are
    dropped; offsets that land on the same cell modulo the grid are kept once
    (first occurrence). The center is excluded unless ``include_center``.
    """
    r, metric = nb.bound
    ry = min(r, height // 2)
    rx = min(r, width // 2)
    seen = set()
    out = []
    for dy in range(-ry, ry + 1):
        for dx in range(-rx, rx + 1):
            if _metric(abs(dy), abs(dx), metric) > r:
                continue
            cell = (dy % height, dx % width)
            if cell == (0, 0) and not nb.include_center:
                continue
            if cell in seen:
                continue
            seen.add(cell)
            out.append((dy, dx))
    return tuple(out)


def neighbors(grid: TorusGrid, nb: Neighborhood, p):
    """Wrapped coordinates of the neighbors of ``p`` in fixed offset order."""
    grid.check(p)
    return [grid.wrap((p[0] + dy, p[1] + dx)) for dy, dx in nb.offsets(grid)]


def torus_distance(grid: TorusGrid, p, q, metric=MANHATTAN):
    grid.check(p)
    grid.check(q)
    dy = _axis_distance(p[0] - q[0], grid.height)
    dx = _axis_distance(p[1] - q[1], grid.width)
    return _metric(dy, dx, metric)


def gray_code(n):
    return n ^ (n >> 1)


@dataclass(frozen=True)
class PositionCode:
    """Per-axis binary-reflected Gray code, ``bits_per_axis`` bits each.

    Coordinates are reduced modulo ``2**bits_per_axis`` before coding, so the
    code is injective over a period no longer than that.
    """

    bits_per_axis: int

    def __post_init__(self):
        if self.bits_per_axis < 1:
            raise ConfigError("bits_per_axis must be positive")

    @property
    def d(self):
        return 2 * self.bits_per_axis

    def axis_code(self, c):
        g = gray_code(c % (1 << self.bits_per_axis))
        n = self.bits_per_axis
        return np.array([(g >> (n - 1 - i)) & 1 for i in range(n)], dtype=np.uint8)

    def table(self, grid: TorusGrid):
        """(H, W, d) array of codes for every pixel of ``grid``."""
        return _position_table(self.bits_per_axis, grid.height, grid.width)


@lru_cache(maxsize=64)
def _position_table(bits, height, width):
    pc = PositionCode(bits)
    rows = np.stack([pc.axis_code(u) for u in range(height)])
    cols = np.stack([pc.axis_code(v) for v in range(width)])
    table = np.concatenate([
        np.broadcast_to(rows[:, None, :], (height, width, bits)),
        np.broadcast_to(cols[None, :, :], (height, width, bits)),
    ], axis=-1)
    table.setflags(write=False)
    return table


def position_code(pc: PositionCode, p, grid: TorusGrid | None = None):
    """Row code followed by column code for coordinate ``p``."""
    if p[0] < 0 or p[1] < 0:
        raise UsageError(f"negative coordinate {tuple(p)}")
    if grid is not None:
        grid.check(p)
    elif max(p) >= 1 << pc.bits_per_axis:
        raise UsageError(f"coordinate {tuple(p)} exceeds the code period {1 << pc.bits_per_axis}")
    return np.concatenate([pc.axis_code(p[0]), pc.axis_code(p[1])])
