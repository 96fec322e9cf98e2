"""Implicit-function region sets.

Every region carries a signed distance (negative inside, positive outside).
It is exact for the primitives (balls, boxes, half-spaces) and uses the usual
min/max combination for Boolean compositions, which is exact only near
boundaries dominated by a single primitive.

Points are passed as arrays of shape ``(..., d)``; all queries broadcast over
the leading axes.

Balls, boxes and half-spaces satisfy the exterior cone condition by
construction (bounded smooth or convex-cornered boundaries); no algorithmic
check is made for composite sets.
"""

from __future__ import annotations

import warnings
from functools import cached_property
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def _pts(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    return x


class RegionSet:
    """Base class. Subclasses implement ``signed_distance`` and ``_inside``."""

    closed: bool = True
    dim: int | None = None

    def signed_distance(self, x) -> np.ndarray:
        raise NotImplementedError

    def _inside(self, sd: np.ndarray, x: np.ndarray) -> np.ndarray:
        return sd <= 0.0 if self.closed else sd < 0.0

    def contains(self, x) -> np.ndarray | bool:
        x = _pts(x)
        out = self._inside(self.signed_distance(x), x)
        return bool(out) if np.ndim(out) == 0 else out

    def distance(self, x) -> np.ndarray | float:
        """Distance to the closure of the set (zero on the closure)."""
        d = np.maximum(self.signed_distance(_pts(x)), 0.0)
        return float(d) if np.ndim(d) == 0 else d

    def erode(self, eps: float) -> "RegionSet":
        """``{x in G : dist(x, G^c) >= eps}``."""
        if eps <= 0:
            raise ValueError("erosion width must be positive")
        return Eroded(self, eps)

    @property
    def is_empty(self) -> bool:
        return False

    # set algebra sugar
    def __or__(self, other: "RegionSet") -> "RegionSet":
        return Union((self, other))

    def __and__(self, other: "RegionSet") -> "RegionSet":
        return Intersection((self, other))

    def __sub__(self, other: "RegionSet") -> "RegionSet":
        return Difference(self, other)

    def __invert__(self) -> "RegionSet":
        return Complement(self)


@dataclass(frozen=True, eq=False)
class Ball(RegionSet):
    center: tuple
    radius: float
    closed: bool = True

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.center)

    def signed_distance(self, x):
        x = _pts(x)
        return np.linalg.norm(x - np.asarray(self.center), axis=-1) - self.radius

    def erode(self, eps):
        if eps <= 0:
            raise ValueError("erosion width must be positive")
        if self.radius <= eps:
            return Empty(self.dim)
        return Ball(self.center, self.radius - eps, closed=True)


@dataclass(frozen=True, eq=False)
class Box(RegionSet):
    lo: tuple
    hi: tuple
    closed: bool = True

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise ValueError("box bounds differ in dimension")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def is_empty(self) -> bool:
        return any(h < l for l, h in zip(self.lo, self.hi))

    def signed_distance(self, x):
        x = _pts(x)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        c, r = (lo + hi) / 2, (hi - lo) / 2
        q = np.abs(x - c) - r
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def contains(self, x):
        # direct comparison: exact on the faces, and cheaper than the distance
        x = _pts(x)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        if self.closed:
            out = np.all((x >= lo) & (x <= hi), axis=-1)
        else:
            out = np.all((x > lo) & (x < hi), axis=-1)
        return bool(out) if np.ndim(out) == 0 else out

    def erode(self, eps):
        if eps <= 0:
            raise ValueError("erosion width must be positive")
        lo = tuple(l + eps for l in self.lo)
        hi = tuple(h - eps for h in self.hi)
        if any(h < l for l, h in zip(lo, hi)):
            return Empty(self.dim)
        return Box(lo, hi, closed=True)


@dataclass(frozen=True, eq=False)
class HalfSpace(RegionSet):
    """``{x : normal . x <= offset}``."""

    normal: tuple
    offset: float
    closed: bool = True

    def __post_init__(self):
        n = np.atleast_1d(np.asarray(self.normal, dtype=float))
        nrm = np.linalg.norm(n)
        if nrm == 0:
            raise ValueError("half-space normal must be nonzero")
        object.__setattr__(self, "normal", tuple(n / nrm))
        object.__setattr__(self, "offset", float(self.offset) / nrm)

    @property
    def dim(self) -> int:
        return len(self.normal)

    def signed_distance(self, x):
        return _pts(x) @ np.asarray(self.normal) - self.offset

    def erode(self, eps):
        if eps <= 0:
            raise ValueError("erosion width must be positive")
        return HalfSpace(self.normal, self.offset - eps, closed=True)


@dataclass(frozen=True, eq=False)
class Empty(RegionSet):
    dim: int | None = None
    closed: bool = True

    @property
    def is_empty(self) -> bool:
        return True

    def signed_distance(self, x):
        x = _pts(x)
        return np.full(x.shape[:-1], np.inf)

    def erode(self, eps):
        return self


@dataclass(frozen=True, eq=False)
class Everything(RegionSet):
    dim: int | None = None
    closed: bool = True

    def signed_distance(self, x):
        x = _pts(x)
        return np.full(x.shape[:-1], -np.inf)

    def erode(self, eps):
        return self


@dataclass(frozen=True, eq=False)
class Complement(RegionSet):
    inner: RegionSet

    @property
    def closed(self) -> bool:  # type: ignore[override]
        return not self.inner.closed

    @property
    def dim(self):
        return self.inner.dim

    def signed_distance(self, x):
        return -self.inner.signed_distance(x)

    def contains(self, x):
        out = ~np.asarray(self.inner.contains(x))
        return bool(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class Union(RegionSet):
    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ValueError("union of nothing")

    @property
    def closed(self) -> bool:  # type: ignore[override]
        return all(p.closed for p in self.parts)

    @property
    def dim(self):
        return next((p.dim for p in self.parts if p.dim is not None), None)

    @property
    def is_empty(self) -> bool:
        return all(p.is_empty for p in self.parts)

    def signed_distance(self, x):
        return np.min([p.signed_distance(x) for p in self.parts], axis=0)

    def contains(self, x):
        out = np.logical_or.reduce([np.asarray(p.contains(x)) for p in self.parts])
        return bool(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class Intersection(RegionSet):
    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ValueError("intersection of nothing")

    @property
    def closed(self) -> bool:  # type: ignore[override]
        return all(p.closed for p in self.parts)

    @property
    def dim(self):
        return next((p.dim for p in self.parts if p.dim is not None), None)

    def signed_distance(self, x):
        return np.max([p.signed_distance(x) for p in self.parts], axis=0)

    def contains(self, x):
        out = np.logical_and.reduce([np.asarray(p.contains(x)) for p in self.parts])
        return bool(out) if np.ndim(out) == 0 else out


def Difference(a: RegionSet, b: RegionSet) -> RegionSet:
    """``a \\ b`` as ``a & ~b``."""
    return Intersection((a, Complement(b)))


@dataclass(frozen=True, eq=False)
class Eroded(RegionSet):
    """Generic erosion through the signed distance: ``sd_G(x) <= -eps``."""

    inner: RegionSet
    eps: float
    closed: bool = True

    @property
    def dim(self):
        return self.inner.dim

    def signed_distance(self, x):
        return self.inner.signed_distance(x) + self.eps


@dataclass(frozen=True, eq=False)
class GridMaskRegion(RegionSet):
    """Region given by a boolean mask on a rectangular grid, queried by nearest node.

    Points outside the grid extent are outside the region.
    """

    lo: tuple
    spacing: tuple
    mask: np.ndarray = field(repr=False)
    closed: bool = True

    @property
    def dim(self) -> int:
        return len(self.lo)

    def _node_index(self, x):
        x = _pts(x)
        idx = np.rint((x - np.asarray(self.lo)) / np.asarray(self.spacing)).astype(np.int64)
        shape = np.asarray(self.mask.shape)
        valid = np.all((idx >= 0) & (idx < shape), axis=-1)
        return np.clip(idx, 0, shape - 1), valid

    def contains(self, x):
        idx, valid = self._node_index(x)
        out = self.mask[tuple(np.moveaxis(idx, -1, 0))] & valid
        return bool(out) if np.ndim(out) == 0 else out

    @cached_property
    def _sd_table(self) -> np.ndarray:
        from scipy.ndimage import distance_transform_edt

        m = np.asarray(self.mask, dtype=bool)
        out_d = distance_transform_edt(~m, sampling=self.spacing) if m.any() else np.full(m.shape, np.inf)
        in_d = distance_transform_edt(m, sampling=self.spacing)
        return np.where(m, -in_d, out_d)

    def signed_distance(self, x):
        idx, valid = self._node_index(x)
        val = self._sd_table[tuple(np.moveaxis(idx, -1, 0))]
        return np.where(valid, val, np.inf)

    @property
    def is_empty(self) -> bool:
        return not bool(np.any(self.mask))


def ball(center, radius, closed=True) -> Ball:
    return Ball(tuple(np.atleast_1d(center)), float(radius), closed)


def box(lo, hi, closed=True) -> Box:
    return Box(tuple(np.atleast_1d(lo)), tuple(np.atleast_1d(hi)), closed)


def half_space(normal, offset, closed=True) -> HalfSpace:
    return HalfSpace(tuple(np.atleast_1d(normal)), float(offset), closed)


def complement(a: RegionSet) -> RegionSet:
    return Complement(a)


def union(*parts: RegionSet) -> RegionSet:
    return Union(tuple(parts))


def intersection(*parts: RegionSet) -> RegionSet:
    return Intersection(tuple(parts))


def difference(a: RegionSet, b: RegionSet) -> RegionSet:
    return Difference(a, b)


def erode(g: RegionSet, eps: float) -> RegionSet:
    return g.erode(eps)


class MollifiedPayoff:
    """Lipschitz ramp ``(1 - dist(x, G_eps) / eps) v 0`` with ``G_eps = erode(G, eps)``.

    ``empty`` is set (and a warning issued) when the eroded goal is empty; the
    payoff is then identically zero.
    """

    def __init__(self, goal: RegionSet, eps: float):
        if eps <= 0:
            raise ValueError("mollification width must be positive")
        self.goal = goal
        self.eps = float(eps)
        self.core = goal.erode(eps)
        self.empty = self.core.is_empty
        if self.empty:
            warnings.warn(f"goal eroded by {eps} is empty; payoff is identically zero", stacklevel=2)

    def __call__(self, x) -> np.ndarray:
        x = _pts(x)
        if self.empty:
            return np.zeros(x.shape[:-1])
        d = np.maximum(self.core.signed_distance(x), 0.0)
        return np.maximum(1.0 - d / self.eps, 0.0)


def mollified_payoff(goal: RegionSet, eps: float) -> MollifiedPayoff:
    return MollifiedPayoff(goal, eps)


def indicator(region: RegionSet):
    """Payoff ``1_region`` as a float-valued callable."""

    def f(x):
        return np.asarray(region.contains(x), dtype=float)

    f.region = region  # type: ignore[attr-defined]
    return f


def region_from_dict(d: dict) -> RegionSet:
    """Build a region from the JSON config form (see docs/formats.md)."""
    if len(d) != 1:
        raise ValueError(f"region must have exactly one constructor key, got {sorted(d)}")
    (kind, arg), = d.items()
    if kind == "ball":
        return ball(arg["center"], arg["radius"], arg.get("closed", True))
    if kind == "box":
        return box(arg["lo"], arg["hi"], arg.get("closed", True))
    if kind == "half_space":
        return half_space(arg["normal"], arg["offset"], arg.get("closed", True))
    if kind == "complement":
        return complement(region_from_dict(arg))
    if kind == "union":
        return union(*[region_from_dict(a) for a in arg])
    if kind == "intersection":
        return intersection(*[region_from_dict(a) for a in arg])
    if kind == "difference":
        return difference(region_from_dict(arg[0]), region_from_dict(arg[1]))
    if kind == "everything":
        return Everything(arg.get("dim"))
    if kind == "empty":
        return Empty(arg.get("dim"))
    raise ValueError(f"unknown region constructor {kind!r}")


def region_to_dict(r: RegionSet) -> dict:
    if isinstance(r, Ball):
        return {"ball": {"center": list(r.center), "radius": r.radius, "closed": r.closed}}
    if isinstance(r, Box):
        return {"box": {"lo": list(r.lo), "hi": list(r.hi), "closed": r.closed}}
    if isinstance(r, HalfSpace):
        return {"half_space": {"normal": list(r.normal), "offset": r.offset, "closed": r.closed}}
    if isinstance(r, Complement):
        return {"complement": region_to_dict(r.inner)}
    if isinstance(r, Union):
        return {"union": [region_to_dict(p) for p in r.parts]}
    if isinstance(r, Intersection):
        return {"intersection": [region_to_dict(p) for p in r.parts]}
    if isinstance(r, Everything):
        return {"everything": {"dim": r.dim}}
    if isinstance(r, Empty):
        return {"empty": {"dim": r.dim}}
    raise TypeError(f"{type(r).__name__} has no config form")


def sample_box(rng: np.random.Generator, lo: Sequence[float], hi: Sequence[float], n: int) -> np.ndarray:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    return lo + (hi - lo) * rng.random((n, lo.size))
