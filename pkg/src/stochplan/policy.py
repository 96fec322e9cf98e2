"""Feedback policies extracted from solved value chains."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .grid import Grid, ValueField
from .hjb import ChainSolution, DiscreteGenerator, generator_for
from .montecarlo import estimate_points
from .motion import MotionSpec, RelativeDwell
from .sde import SdeModel


def multilinear(values: np.ndarray, grid: Grid, x: np.ndarray) -> np.ndarray:
    """Interpolate node data ``values[..., N]`` (flat node axis last) at points ``x (P, d)``."""
    x = np.asarray(x, float)
    d = grid.dim
    lo, h, nodes = np.asarray(grid.lo), np.asarray(grid.spacing), np.asarray(grid.nodes)
    r = np.clip((x - lo) / h, 0.0, nodes - 1)
    i0 = np.minimum(np.floor(r).astype(np.int64), nodes - 2)
    w = r - i0
    out = 0.0
    strides = np.array([int(np.prod(nodes[a + 1:])) for a in range(d)])
    for corner in range(2 ** d):
        bits = np.array([(corner >> a) & 1 for a in range(d)])
        idx = ((i0 + bits) * strides).sum(axis=-1)
        wt = np.prod(np.where(bits, w, 1.0 - w), axis=-1)
        out = out + values[..., idx] * wt
    return out


@dataclass
class PhaseTable:
    times: np.ndarray  # (S,) ascending
    controls: np.ndarray  # (S, N, m)
    # interpolation data: switching functions (S, m, N) or lattice scores (S, K, N)
    scores: Optional[np.ndarray] = None
    # None: absolute clock; otherwise the clock is base + (t - phase_start)
    relative_base: Optional[float] = None

    def slice_index(self, clock: np.ndarray) -> np.ndarray:
        ts = self.times
        j = np.clip(np.searchsorted(ts, clock), 1, max(len(ts) - 1, 1))
        if len(ts) == 1:
            return np.zeros_like(j)
        left = ts[j - 1]
        return np.where(np.abs(clock - left) <= np.abs(ts[j] - clock), j - 1, j)


class FeedbackPolicy:
    """Markov feedback law ``u(t, x)`` per phase, driven by the tracker's phase index."""

    def __init__(self, grid: Grid, tables: Sequence[PhaseTable], lo, hi, interpolation: str = "nearest",
                 mode: str = "affine", lattice: Optional[np.ndarray] = None):
        if interpolation not in ("nearest", "interpolate"):
            raise ValueError(f"unknown interpolation {interpolation!r}")
        self.grid = grid
        self.tables = list(tables)
        self.lo = np.asarray(lo, float)
        self.hi = np.asarray(hi, float)
        self.interpolation = interpolation
        self.mode = mode
        self.lattice = lattice
        if interpolation == "interpolate" and any(t.scores is None for t in self.tables):
            raise ValueError("interpolation needs stored scores")

    @property
    def n_phases(self) -> int:
        return len(self.tables)

    def all_in_box(self) -> bool:
        return all(np.all((t.controls >= self.lo - 1e-12) & (t.controls <= self.hi + 1e-12)) for t in self.tables)

    def __call__(self, t, x, phase=None, phase_start=None):
        x = np.asarray(x, float)
        P = x.shape[0]
        t = np.broadcast_to(np.asarray(t, float), (P,))
        phase = np.zeros(P, dtype=np.int64) if phase is None else np.minimum(np.asarray(phase), self.n_phases - 1)
        pstart = t if phase_start is None else np.broadcast_to(np.asarray(phase_start, float), (P,))
        out = np.empty((P, self.lo.size))
        for k in np.unique(phase):
            sel = np.flatnonzero(phase == k)
            tab = self.tables[int(k)]
            clock = t[sel] if tab.relative_base is None else tab.relative_base + (t[sel] - pstart[sel])
            si = tab.slice_index(clock)
            if self.interpolation == "nearest":
                node = self.grid.nearest_flat(x[sel])
                out[sel] = tab.controls[si, node]
            else:
                for s in np.unique(si):
                    ss = sel[si == s]
                    sc = multilinear(tab.scores[s], self.grid, x[ss])  # (m or K, p)
                    if self.mode == "affine":
                        out[ss] = np.where(sc.T >= 0.0, self.hi, self.lo)
                    else:
                        out[ss] = self.lattice[np.argmax(sc, axis=0)]
        return out


def _clock_bases(spec: MotionSpec) -> list[Optional[float]]:
    out = []
    for i, p in enumerate(spec.phases):
        out.append(spec.deadline(i - 1) if isinstance(p.deadline, RelativeDwell) else None)
    return out


def extract_policy(solution: ChainSolution, model: Optional[SdeModel] = None, every: Optional[float] = None,
                   interpolation: str = "nearest", scale: float = 1.0) -> FeedbackPolicy:
    """Argmax of the discrete Hamiltonian at every stored slice (optionally decimated to ``every``)."""
    prob = solution.problem
    model = prob.model if model is None else model
    gen: DiscreteGenerator = generator_for(model, prob.grid, prob.method, prob.lattice_points)
    bases = _clock_bases(prob.spec)
    tables = []
    for k, snaps in enumerate(solution.fields):
        chosen = _decimate(snaps, every)
        times = np.array([s.t for s in chosen])
        controls, scores = [], []
        for s in chosen:
            V = s.values.reshape(-1) * scale
            _, u = gen.hamiltonian(V)
            controls.append(u)
            if interpolation == "interpolate":
                scores.append(gen.affine_terms(V)[1] if gen.mode == "affine" else gen.lattice_scores(V))
        tables.append(PhaseTable(times, np.array(controls), np.array(scores) if scores else None, bases[k]))
    return FeedbackPolicy(prob.grid, tables, gen.lo, gen.hi, interpolation, gen.mode,
                          getattr(gen, "controls", None))


def _decimate(snaps, every):
    if every is None or len(snaps) <= 2:
        return list(snaps)
    out, last = [], None
    for s in snaps:
        if last is None or s.t - last >= every - 1e-9:
            out.append(s)
            last = s.t
    if out[-1] is not snaps[-1]:
        out.append(snaps[-1])
    return out


# -- closed-loop verification ------------------------------------------------


@dataclass
class ClosedLoopReport:
    points: np.ndarray
    v_pde: np.ndarray
    p_mc: np.ndarray
    ci: np.ndarray
    tol: float
    n_paths: int
    dt: float
    seed: int

    @property
    def gap(self) -> np.ndarray:
        return self.p_mc - self.v_pde

    @property
    def passed(self) -> bool:
        return bool(np.all(self.p_mc >= self.v_pde - self.tol))

    def summary(self) -> dict:
        g = self.gap
        i = int(np.argmin(g)) if g.size else 0
        return {"passed": self.passed, "tol": self.tol, "n_nodes": int(g.size), "min_gap": float(g.min()),
                "max_abs_gap": float(np.abs(g).max()), "mean_gap": float(g.mean()),
                "worst_point": self.points[i].tolist(), "max_ci": float(self.ci.max()),
                "n_paths": self.n_paths, "dt": self.dt, "seed": self.seed}


def sample_nodes(field: ValueField, n: int, seed: int = 0, lo: float = 0.05, hi: float = 0.95,
                 mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Flat indices of ``n`` distinct nodes with ``lo <= V <= hi`` (deterministic given seed)."""
    v = field.values.reshape(-1)
    ok = (v >= lo) & (v <= hi)
    if mask is not None:
        ok &= np.asarray(mask).reshape(-1)
    cand = np.flatnonzero(ok)
    if cand.size == 0:
        cand = np.arange(v.size)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(cand, size=min(n, cand.size), replace=False))


def closed_loop_verify(policy, model: SdeModel, spec: MotionSpec, nodes, reference: ValueField, n_paths: int,
                       dt: float, seed: int, mode: str = "indicator", eps: Optional[float] = None,
                       t0: float = 0.0, tol: float = 0.07, threads: int = 1) -> ClosedLoopReport:
    """MC success probability under ``policy`` at grid nodes, compared with ``reference``.

    ``nodes`` are flat node indices of ``reference.grid``; node ``i`` uses random
    stream ``(i,)`` so runs with different policies share noise.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    pts = reference.grid.flat_points()[nodes]
    p, ci = estimate_points(model, policy, spec, t0, pts, n_paths, dt, seed, node_ids=nodes, mode=mode,
                            eps=eps, threads=threads)
    return ClosedLoopReport(pts, reference.values.reshape(-1)[nodes], p, ci, tol, n_paths, dt, seed)


# -- CSV export --------------------------------------------------------------


def policy_rows(policy: FeedbackPolicy):
    X = policy.grid.flat_points()
    for k, tab in enumerate(policy.tables):
        for s, t in enumerate(tab.times):
            for n in range(X.shape[0]):
                yield (k + 1, t, *X[n], *tab.controls[s, n])


def policy_meta(policy: FeedbackPolicy) -> dict:
    return {"grid": policy.grid.to_dict(), "control_lo": policy.lo.tolist(), "control_hi": policy.hi.tolist(),
            "phases": [{"relative_base": t.relative_base, "n_slices": int(len(t.times))} for t in policy.tables]}


def save_policy(policy: FeedbackPolicy, path: str) -> None:
    from .io import write_csv, write_json

    d, m = policy.grid.dim, policy.lo.size
    header = ["phase", "t"] + [f"x{i + 1}" for i in range(d)] + [f"u{j + 1}" for j in range(m)]
    write_csv(path, header, policy_rows(policy))
    write_json(os.path.splitext(path)[0] + ".meta.json", policy_meta(policy))


def load_policy(path: str) -> FeedbackPolicy:
    """Load a policy written by ``save_policy`` (nearest-node lookup)."""
    with open(os.path.splitext(path)[0] + ".meta.json") as fh:
        meta = json.load(fh)
    grid = Grid(**meta["grid"])
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    d, N = grid.dim, grid.size
    tables = []
    for k, ph in enumerate(meta["phases"]):
        rows = data[data[:, 0] == k + 1]
        S = ph["n_slices"]
        if rows.shape[0] != S * N:
            raise ValueError(f"phase {k + 1}: expected {S * N} rows, found {rows.shape[0]}")
        rows = rows.reshape(S, N, -1)
        tables.append(PhaseTable(rows[:, 0, 1].copy(), rows[:, :, 2 + d:].copy(), None, ph["relative_base"]))
    return FeedbackPolicy(grid, tables, meta["control_lo"], meta["control_hi"])
