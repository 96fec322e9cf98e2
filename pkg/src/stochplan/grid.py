"""Rectangular node grids and value-field snapshots."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid:
    lo: tuple
    hi: tuple
    nodes: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        nodes = tuple(int(n) for n in np.atleast_1d(self.nodes))
        if not (len(lo) == len(hi) == len(nodes)):
            raise ValueError("grid extents and node counts differ in dimension")
        if any(n < 3 for n in nodes):
            raise ValueError("each axis needs at least 3 nodes")
        if any(h <= l for l, h in zip(lo, hi)):
            raise ValueError("grid extent must have hi > lo on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def covering(cls, lo, hi, nodes, margin: float = 0.2) -> "Grid":
        """Grid over ``[lo, hi]`` widened by ``margin`` times the width on each side."""
        lo, hi = np.atleast_1d(np.asarray(lo, float)), np.atleast_1d(np.asarray(hi, float))
        w = hi - lo
        return cls(tuple(lo - margin * w), tuple(hi + margin * w), nodes)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple:
        return self.nodes

    @property
    def size(self) -> int:
        return int(np.prod(self.nodes))

    @property
    def spacing(self) -> tuple:
        return tuple((h - l) / (n - 1) for l, h, n in zip(self.lo, self.hi, self.nodes))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(l, h, n) for l, h, n in zip(self.lo, self.hi, self.nodes)]

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``nodes + (d,)`` in C order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def flat_points(self) -> np.ndarray:
        return self.points().reshape(-1, self.dim)

    def nearest_index(self, x) -> np.ndarray:
        """Multi-index of the nearest node, clipped to the grid. Shape ``(..., d)``."""
        x = np.asarray(x, float)
        idx = np.rint((x - np.asarray(self.lo)) / np.asarray(self.spacing)).astype(np.int64)
        return np.clip(idx, 0, np.asarray(self.nodes) - 1)

    def nearest_flat(self, x) -> np.ndarray:
        idx = self.nearest_index(x)
        return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), self.nodes)

    def edge_mask(self) -> np.ndarray:
        m = np.zeros(self.nodes, dtype=bool)
        for ax in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[ax] = 0
            m[tuple(sl)] = True
            sl[ax] = -1
            m[tuple(sl)] = True
        return m

    def neighbor_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat indices of the +/- neighbour along each axis, shape ``(d, size)``.

        At the grid edge the neighbour is the node itself (zero-gradient ghost).
        """
        idx = np.arange(self.size).reshape(self.nodes)
        plus = np.empty((self.dim, self.size), dtype=np.int64)
        minus = np.empty((self.dim, self.size), dtype=np.int64)
        for ax in range(self.dim):
            p = np.concatenate([np.take(idx, np.arange(1, self.nodes[ax]), axis=ax),
                                np.take(idx, [self.nodes[ax] - 1], axis=ax)], axis=ax)
            m = np.concatenate([np.take(idx, [0], axis=ax),
                                np.take(idx, np.arange(0, self.nodes[ax] - 1), axis=ax)], axis=ax)
            plus[ax] = p.ravel()
            minus[ax] = m.ravel()
        return plus, minus

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "nodes": list(self.nodes)}


@dataclass(frozen=True)
class ValueField:
    """Value function of phase ``phase`` (1-based) at time ``t`` on ``grid``."""

    grid: Grid
    t: float
    values: np.ndarray = field(repr=False)
    phase: int = 1

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True).reshape(self.grid.shape)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def at(self, x) -> np.ndarray:
        """Nearest-node lookup."""
        idx = self.grid.nearest_index(x)
        return self.values[tuple(np.moveaxis(idx, -1, 0))]

    def interpolate(self, x) -> np.ndarray:
        from scipy.interpolate import RegularGridInterpolator

        f = RegularGridInterpolator(self.grid.axes(), self.values, bounds_error=False, fill_value=None)
        return f(np.asarray(x, float))

    def scaled(self, c: float) -> "ValueField":
        return ValueField(self.grid, self.t, c * self.values, self.phase)
