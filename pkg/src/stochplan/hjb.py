"""Backward HJB sweeps for chains of value functions.

Phase ``k`` solves ``-sup_u L^u V_k = 0`` on ``[0, T_k) x A_k`` with Dirichlet data
``V_{k+1} * l_k`` on the complement of ``A_k`` and at ``T_k``. ``V_{n+1} = 1``.

The scheme is explicit Euler backward in time with upwinded first differences
and central second differences. It is monotone when
``dt * sum_j (|f_j| / h_j + a_jj / h_j^2) <= 1``, and steps are refused above
0.9 of that bound. Grid edges use zero-gradient ghost nodes, so the stencil is
one-sided there.

For control-affine models (``SdeModel.affine``) the drift is split as
``u = lo + (hi - lo) s`` with ``s`` in the unit box. The base term and each
control column are upwinded by their own sign, which makes the discrete
Hamiltonian affine in ``s``. Its maximiser is then bang-bang, with the sign of
the switching function selecting each coordinate (ties go to the upper end).
Other models are maximised over a control lattice.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from . import kernels
from .geometry import GridMaskRegion
from .grid import Grid, ValueField
from .motion import MotionSpec, RelativeDwell
from .sde import SdeModel

log = logging.getLogger(__name__)

CFL_SAFETY = 0.9


class CFLError(ValueError):
    def __init__(self, dt: float, bound: float):
        super().__init__(f"time step {dt:.6g} violates the CFL bound {bound:.6g}")
        self.dt = dt
        self.bound = bound


class StencilError(IndexError):
    pass


def _lattice(lo, hi, points: int) -> np.ndarray:
    axes = [np.array([l]) if h == l else np.linspace(l, h, points) for l, h in zip(lo, hi)]
    return np.array(list(itertools.product(*axes)), dtype=float)


class DiscreteGenerator:
    """Upwind coefficients of the controlled generator at every grid node."""

    def __init__(self, model: SdeModel, grid: Grid, method: str = "auto", lattice_points: int = 9):
        if grid.dim != model.state_dim:
            raise ValueError("grid dimension does not match the model")
        if method not in ("auto", "affine", "lattice"):
            raise ValueError(f"unknown method {method!r}")
        if method == "affine" and model.affine is None:
            raise ValueError("model has no control-affine structure")
        self.model = model
        self.grid = grid
        self.mode = "affine" if (model.affine is not None and method != "lattice") else "lattice"
        self.lo = np.asarray(model.control_lo)
        self.hi = np.asarray(model.control_hi)
        plus, minus = grid.neighbor_tables()
        self.plus, self.minus = np.ascontiguousarray(plus), np.ascontiguousarray(minus)
        self.inv_h = 1.0 / np.asarray(grid.spacing)
        X = grid.flat_points()
        if self.mode == "affine":
            self._build_affine(X)
        else:
            self._build_lattice(X, lattice_points)

    def _build_affine(self, X):
        p = self.model.affine(X)
        w = self.hi - self.lo
        b = p.f0 + np.einsum("ndm,m->nd", p.G, self.lo)
        ab = p.a0 + np.einsum("ndm,m->nd", p.Ad, self.lo)
        c = p.G * w  # (N, d, m)
        ac = p.Ad * w
        c_ = np.ascontiguousarray
        self.Bp = c_(np.maximum(b, 0.0).T)
        self.Bm = c_(np.minimum(b, 0.0).T)
        self.hA0 = c_(0.5 * ab.T)
        self.Cp = c_(np.maximum(c, 0.0).transpose(2, 1, 0))
        self.Cm = c_(np.minimum(c, 0.0).transpose(2, 1, 0))
        self.hAj = c_(0.5 * ac.transpose(2, 1, 0))
        ih = self.inv_h[:, None]
        rate = (np.abs(b).T + np.abs(c).sum(axis=2).T) * ih + (ab.T + np.maximum(ac, 0.0).sum(axis=2).T) * ih ** 2
        self.rate = rate.sum(axis=0)
        self.cross = None

    def _build_lattice(self, X, points):
        U = _lattice(self.lo, self.hi, points)
        self.controls = U
        N, d = X.shape
        K = U.shape[0]
        F = np.empty((K, d, N))
        A = np.empty((K, d, N))
        cross = []
        pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
        Xc = np.empty((K, len(pairs), N))
        for c, u in enumerate(U):
            uu = np.broadcast_to(u, (N, u.size))
            f = np.asarray(self.model.drift(X, uu), float)
            a = self.model.sigma_sigma_t(X, uu)
            F[c] = f.T
            A[c] = np.diagonal(a, axis1=1, axis2=2).T
            for q, (i, j) in enumerate(pairs):
                Xc[c, q] = a[:, i, j]
        c_ = np.ascontiguousarray
        self.Fp = c_(np.maximum(F, 0.0))
        self.Fm = c_(np.minimum(F, 0.0))
        self.hA = c_(0.5 * A)
        self.pairs = pairs
        self.cross = Xc if (pairs and np.any(Xc != 0.0)) else None
        ih = self.inv_h[None, :, None]
        rate = (np.abs(F) * ih + A * ih ** 2).sum(axis=1)
        if self.cross is not None:
            # experimental: cross terms only add to the bound, the 4-point stencil is not monotone
            hh = np.array([self.inv_h[i] * self.inv_h[j] for i, j in pairs])[None, :, None]
            rate = rate + (np.abs(Xc) * hh).sum(axis=1)
            log.warning("cross-diffusion terms present: using the experimental 4-point stencil")
        self.rate = rate.max(axis=0)

    @property
    def cfl_bound(self) -> float:
        r = float(self.rate.max())
        return math.inf if r == 0.0 else CFL_SAFETY / r

    @property
    def control_dim(self) -> int:
        return self.lo.size

    # -- discrete Hamiltonian pieces (NumPy, same arithmetic as the kernels) --

    def _derivs(self, V, ax):
        vp = V[self.plus[ax]]
        vm = V[self.minus[ax]]
        ih = self.inv_h[ax]
        return (vp - V) * ih, (V - vm) * ih, (vp - 2.0 * V + vm) * (ih * ih)

    def affine_terms(self, V: np.ndarray):
        """Base Hamiltonian ``(N,)`` and switching functions ``(m, N)``."""
        V = np.asarray(V, float).reshape(-1)
        H = np.zeros_like(V)
        S = np.zeros((self.control_dim,) + V.shape)
        for ax in range(self.grid.dim):
            dp, dm, d2 = self._derivs(V, ax)
            H = H + (self.Bp[ax] * dp + self.Bm[ax] * dm + self.hA0[ax] * d2)
            for j in range(self.control_dim):
                S[j] = S[j] + (self.Cp[j, ax] * dp + self.Cm[j, ax] * dm + self.hAj[j, ax] * d2)
        return H, S

    def _cross_term(self, V, q):
        i, j = self.pairs[q]
        shape = self.grid.shape
        Vg = V.reshape(shape)
        idx = [np.arange(n) for n in shape]

        def shifted(si, sj):
            ii = [a for a in idx]
            ii[i] = np.clip(idx[i] + si, 0, shape[i] - 1)
            ii[j] = np.clip(idx[j] + sj, 0, shape[j] - 1)
            return Vg[np.ix_(*ii)].reshape(-1)

        return (shifted(1, 1) - shifted(1, -1) - shifted(-1, 1) + shifted(-1, -1)) * (
            0.25 * self.inv_h[i] * self.inv_h[j])

    def lattice_scores(self, V: np.ndarray) -> np.ndarray:
        """Discrete ``L^u V`` for every lattice control, shape ``(K, N)``."""
        V = np.asarray(V, float).reshape(-1)
        ders = [self._derivs(V, ax) for ax in range(self.grid.dim)]
        K = self.Fp.shape[0]
        out = np.empty((K, V.size))
        crosses = None
        if self.cross is not None:
            crosses = [self._cross_term(V, q) for q in range(len(self.pairs))]
        for c in range(K):
            h = np.zeros_like(V)
            for ax, (dp, dm, d2) in enumerate(ders):
                h = h + (self.Fp[c, ax] * dp + self.Fm[c, ax] * dm + self.hA[c, ax] * d2)
            if crosses is not None:
                for q, xt in enumerate(crosses):
                    h = h + self.cross[c, q] * xt
            out[c] = h
        return out

    def hamiltonian(self, V: np.ndarray):
        """``(sup_u L^u V, u_star)`` at every node; ``u_star`` has shape ``(N, m)``."""
        if self.mode == "affine":
            H, S = self.affine_terms(V)
            for j in range(self.control_dim):
                H = H + np.where(S[j] >= 0.0, S[j], 0.0)
            u = np.where(S.T >= 0.0, self.hi, self.lo)
            return H, u
        sc = self.lattice_scores(V)
        best = np.argmax(sc, axis=0)
        return sc[best, np.arange(sc.shape[1])], self.controls[best]

    def step(self, V, interior, dirichlet, dt: float) -> np.ndarray:
        """One backward step ``V + dt sup_u L^u V`` on ``interior``, Dirichlet elsewhere, clipped to [0, 1]."""
        bound = self.cfl_bound
        if dt > bound * (1 + 1e-12):
            raise CFLError(dt, bound)
        if self.mode == "affine":
            return kernels.hjb_step_affine(V, interior, dirichlet, self.plus, self.minus, self.inv_h,
                                           self.Bp, self.Bm, self.hA0, self.Cp, self.Cm, self.hAj, dt)
        if self.cross is None:
            return kernels.hjb_step_lattice(V, interior, dirichlet, self.plus, self.minus, self.inv_h,
                                            self.Fp, self.Fm, self.hA, dt)
        best = self.lattice_scores(V).max(axis=0)
        out = np.minimum(np.maximum(V + dt * best, 0.0), 1.0)
        return np.where(interior.astype(bool), out, dirichlet)


def _flat_node(grid: Grid, node) -> int:
    if np.ndim(node) == 0:
        return int(node)
    return int(np.ravel_multi_index(tuple(int(i) for i in node), grid.shape))


def dynkin_apply(model: SdeModel, field: ValueField, node, u) -> float:
    """Discrete ``f . D V + 1/2 Tr[sigma sigma^T D^2 V]`` at an interior node for control ``u``.

    First differences are upwinded by the sign of each drift component; cross
    second derivatives use the 4-point central stencil.
    """
    grid = field.grid
    flat = _flat_node(grid, node)
    idx = np.unravel_index(flat, grid.shape)
    if any(i == 0 or i == n - 1 for i, n in zip(idx, grid.shape)):
        raise StencilError(f"node {tuple(int(i) for i in idx)} lies on the grid edge")
    x = grid.flat_points()[flat][None]
    u = np.atleast_1d(np.asarray(u, float))[None]
    f = np.asarray(model.drift(x, u), float)[0]
    a = model.sigma_sigma_t(x, u)[0]
    V = field.values
    h = np.asarray(grid.spacing)
    out = 0.0
    for i in range(grid.dim):
        e = np.zeros(grid.dim, dtype=int)
        e[i] = 1
        vp, v0, vm = V[tuple(np.add(idx, e))], V[idx], V[tuple(np.subtract(idx, e))]
        d1 = (vp - v0) / h[i] if f[i] >= 0 else (v0 - vm) / h[i]
        out += f[i] * d1 + 0.5 * a[i, i] * (vp - 2.0 * v0 + vm) / h[i] ** 2
        for j in range(i + 1, grid.dim):
            if a[i, j] == 0.0:
                continue
            ej = np.zeros(grid.dim, dtype=int)
            ej[j] = 1
            vpp = V[tuple(np.add(np.add(idx, e), ej))]
            vpm = V[tuple(np.subtract(np.add(idx, e), ej))]
            vmp = V[tuple(np.add(np.subtract(idx, e), ej))]
            vmm = V[tuple(np.subtract(np.subtract(idx, e), ej))]
            out += a[i, j] * (vpp - vpm - vmp + vmm) / (4.0 * h[i] * h[j])
    return float(out)


_GEN_CACHE: dict = {}


def generator_for(model: SdeModel, grid: Grid, method: str = "auto", lattice_points: int = 9) -> DiscreteGenerator:
    key = (id(model), grid, method, lattice_points)
    gen = _GEN_CACHE.get(key)
    if gen is None or gen.model is not model:
        if len(_GEN_CACHE) > 16:
            _GEN_CACHE.clear()
        gen = DiscreteGenerator(model, grid, method, lattice_points)
        _GEN_CACHE[key] = gen
    return gen


def hamiltonian_max(model: SdeModel, field: ValueField, node, method: str = "auto", lattice_points: int = 9):
    """``(sup_u L^u V, u_star)`` at one node."""
    gen = generator_for(model, field.grid, method, lattice_points)
    flat = _flat_node(field.grid, node)
    H, u = gen.hamiltonian(field.values.reshape(-1))
    return float(H[flat]), u[flat].copy()


def default_eps(grid: Grid) -> float:
    """Two grid cells' diagonal length."""
    return 2.0 * float(np.sqrt(np.sum(np.square(grid.spacing))))


@dataclass
class ChainProblem:
    model: SdeModel
    spec: MotionSpec
    grid: Grid
    dt_pde: Optional[float] = None
    # time between stored snapshots (None: every step)
    snapshot_every: Optional[float] = None
    method: str = "auto"
    lattice_points: int = 9
    payoff_mode: str = "mollified"

    def __post_init__(self):
        if self.spec.dim is not None and self.spec.dim != self.grid.dim:
            raise ValueError("spec dimension does not match the grid")
        if self.spec.eps is None and self.payoff_mode == "mollified":
            self.spec = self.spec.with_eps(default_eps(self.grid))

    @property
    def eps(self) -> Optional[float]:
        return self.spec.eps

    @cached_property
    def generator(self) -> DiscreteGenerator:
        return generator_for(self.model, self.grid, self.method, self.lattice_points)

    @cached_property
    def runtime(self):
        return self.spec.runtime_phases(self.payoff_mode)

    @cached_property
    def masks(self) -> list[np.ndarray]:
        """Per phase: nodes inside ``A_k`` (updated by the PDE)."""
        X = self.grid.flat_points()
        return [np.asarray(ph.exit_set.contains(X), dtype=bool).reshape(-1) for ph in self.runtime]

    @cached_property
    def payoffs(self) -> list[np.ndarray]:
        X = self.grid.flat_points()
        return [np.asarray(ph.payoff(X), float).reshape(-1) for ph in self.runtime]

    def anchors(self) -> list[float]:
        """Absolute times at which some phase starts or ends."""
        out = [self.spec.deadline(i) for i in range(self.spec.n) if self.spec.deadline(i) is not None]
        if isinstance(self.spec.phases[-1].deadline, RelativeDwell):
            out.append(self.spec.final_time)
        return sorted(set(out))

    def choose_dt(self) -> float:
        bound = self.generator.cfl_bound
        dt = bound if self.dt_pde is None else float(self.dt_pde)
        if dt <= 0:
            raise ValueError("dt_pde must be positive")
        if dt > bound * (1 + 1e-12):
            raise CFLError(dt, bound)
        anchors = [a for a in self.anchors() if a > 0]
        if not anchors:
            return dt
        Tm = max(anchors)
        n0 = max(1, int(math.ceil(Tm / dt - 1e-9)))
        for n in range(n0, n0 + 5000):
            if all(abs(a * n / Tm - round(a * n / Tm)) < 1e-9 for a in anchors):
                return Tm / n
        return dt


@dataclass
class ChainSolution:
    problem: ChainProblem
    dt: float
    # fields[k] holds the snapshots of phase k+1, ascending in time
    fields: list = field(default_factory=list)
    frozen_successor: Optional[np.ndarray] = None
    phase_end: list = field(default_factory=list)
    cfl_bound: float = math.inf

    @property
    def cfl_number(self) -> float:
        return self.dt / (self.cfl_bound / CFL_SAFETY) if math.isfinite(self.cfl_bound) else 0.0

    def field(self, k: int, t: float) -> ValueField:
        """Stored snapshot of phase ``k`` (1-based) nearest to ``t``."""
        snaps = self.fields[k - 1]
        ts = np.array([s.t for s in snaps])
        return snaps[int(np.argmin(np.abs(ts - t)))]

    def initial(self, k: int = 1) -> ValueField:
        return self.fields[k - 1][0]

    def times(self, k: int) -> np.ndarray:
        return np.array([s.t for s in self.fields[k - 1]])

    def successor_values(self, k: int, t: float) -> np.ndarray:
        """``V_{k+1}(t)`` as used for phase ``k``'s Dirichlet data."""
        n = len(self.fields)
        if k == n:
            return np.ones(self.problem.grid.size)
        if k == n - 1 and self.frozen_successor is not None:
            return self.frozen_successor
        snap = self.field(k + 1, t)
        if abs(snap.t - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"no stored slice of phase {k + 1} at t={t}")
        return snap.values.reshape(-1)


def _step_index(t: float, dt: float) -> int:
    return int(round(t / dt))


def solve_chain(problem: ChainProblem, progress=None) -> ChainSolution:
    """Solve ``V_n, ..., V_1`` backward in time.

    Phases with absolute deadlines are swept in lockstep on a common time grid
    (``V_{k+1}`` is advanced before ``V_k`` within a step). A trailing dwell
    phase is solved first on ``[T_{n-1}, T_{n-1} + duration]`` and its value at
    ``T_{n-1}`` is the frozen successor of phase ``n-1``.
    """
    spec = problem.spec
    gen = problem.generator
    dt = problem.choose_dt()
    n = spec.n
    N = problem.grid.size
    masks = [m.astype(np.uint8) for m in problem.masks]
    ells = problem.payoffs
    every = 1 if problem.snapshot_every is None else max(1, int(round(problem.snapshot_every / dt)))
    sol = ChainSolution(problem, dt, [[] for _ in range(n)], cfl_bound=gen.cfl_bound)
    ones = np.ones(N)

    dwell = isinstance(spec.phases[-1].deadline, RelativeDwell)
    n_lock = n - 1 if dwell else n
    succ_last = ones
    if dwell:
        t_start = spec.deadline(n - 2)
        j_hi, j_lo = _step_index(spec.final_time, dt), _step_index(t_start, dt)
        ell = ells[-1]
        dir_vals = ones * ell
        V = dir_vals.copy()
        snaps = [ValueField(problem.grid, j_hi * dt, V, n)]
        for j in range(j_hi - 1, j_lo - 1, -1):
            V = gen.step(V, masks[-1], dir_vals, dt)
            if j % every == 0 or j == j_lo:
                snaps.append(ValueField(problem.grid, j * dt, V, n))
            if progress is not None:
                progress(n, j * dt)
        sol.fields[n - 1] = snaps[::-1]
        succ_last = V.copy()
        succ_last.setflags(write=False)
        sol.frozen_successor = succ_last

    D = [_step_index(spec.deadline(k), dt) for k in range(n_lock)]
    special = set(D) | {0}
    J = max(D)
    cur: list = [None] * n_lock
    stored: list = [[] for _ in range(n_lock)]
    for j in range(J, -1, -1):
        for k in range(n_lock - 1, -1, -1):
            if j > D[k]:
                continue
            succ = succ_last if k == n_lock - 1 else cur[k + 1]
            dir_vals = succ * ells[k]
            if j == D[k]:
                cur[k] = dir_vals.copy()
            else:
                cur[k] = gen.step(cur[k], masks[k], dir_vals, dt)
        if j % every == 0 or j in special:
            for k in range(n_lock):
                if cur[k] is not None and j <= D[k]:
                    stored[k].append(ValueField(problem.grid, j * dt, cur[k], k + 1))
        if progress is not None:
            progress(1, j * dt)
    for k in range(n_lock):
        sol.fields[k] = stored[k][::-1]
    sol.phase_end = [D[k] * dt for k in range(n_lock)] + ([spec.final_time] if dwell else [])
    return sol


def step_backward(problem: ChainProblem, field: ValueField, dt: float, k: int,
                  successor: Optional[np.ndarray] = None) -> ValueField:
    """Advance phase ``k`` (1-based) from ``field.t`` to ``field.t - dt``.

    ``successor`` is ``V_{k+1}`` at the new time (defaults to 1, i.e. ``V_{n+1}``).
    """
    gen = problem.generator
    succ = np.ones(problem.grid.size) if successor is None else np.asarray(successor, float).reshape(-1)
    dir_vals = succ * problem.payoffs[k - 1]
    V = gen.step(field.values.reshape(-1), problem.masks[k - 1].astype(np.uint8), dir_vals, dt)
    return ValueField(field.grid, field.t - dt, V, k)


def boundary_audit(sol: ChainSolution) -> dict:
    """Check Dirichlet data bit-for-bit on every stored slice.

    Nodes outside ``A_k`` must equal ``V_{k+1} * l_k``, and so must every node at
    the phase's terminal time.
    """
    prob = sol.problem
    worst = 0.0
    checked = 0
    failures = []
    for k in range(1, len(sol.fields) + 1):
        ext = ~prob.masks[k - 1]
        ell = prob.payoffs[k - 1]
        for snap in sol.fields[k - 1]:
            expect = sol.successor_values(k, snap.t) * ell
            got = snap.values.reshape(-1)
            sel = np.ones_like(ext) if abs(snap.t - sol.phase_end[k - 1]) < 0.5 * sol.dt else ext
            diff = np.abs(got[sel] - expect[sel])
            checked += int(sel.sum())
            if diff.size and diff.max() > 0.0:
                worst = max(worst, float(diff.max()))
                failures.append((k, snap.t))
    return {"ok": not failures, "max_deviation": worst, "nodes_checked": checked, "failures": failures[:20]}


def superlevel_set(field: ValueField, p: float) -> GridMaskRegion:
    """Nodes with ``V > p`` as a nearest-node region (``.mask`` holds the node mask)."""
    if not (0.0 <= p < 1.0 or p == 1.0):
        raise ValueError("p must lie in [0, 1]")
    mask = np.asarray(field.values > p)
    return GridMaskRegion(field.grid.lo, field.grid.spacing, mask)
