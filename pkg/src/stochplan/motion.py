"""Motion-planning specifications, sequential exit times and event indicators.

Times are resolved on the trajectory's step grid: an exit happens at the first
step whose state lies outside the set (no bridge correction), and a deadline
``T_i`` is the step nearest to ``T_i``.

Two exit-time conventions are provided:

* ``sequential_exit_times`` chains plain exit times: the search for exit ``i``
  starts at exit ``i-1``.
* ``chained_exit_times`` restarts each search at the clipped time
  ``tau_{i-1} = Theta_{i-1} ^ T_{i-1}``. This is what a backward chain of value
  functions computes, and it is the form that matches the reach event when a
  path outlives an intermediate deadline inside an earlier way set.

For path events every deadline is the common horizon, and the two coincide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .geometry import Everything, MollifiedPayoff, RegionSet, difference, indicator, intersection
from .sde import TrajectorySample

INF = math.inf


class SpecificationError(ValueError):
    pass


@dataclass(frozen=True)
class PathUntilT:
    """Reach the goal at some time before the global horizon while staying in the way set."""


@dataclass(frozen=True)
class ReachAtT:
    """Be in the goal at exactly ``time`` while staying in the way set since the previous deadline."""

    time: float


@dataclass(frozen=True)
class RelativeDwell:
    """Stay in the way set for ``duration`` after the previous phase succeeded."""

    duration: float


@dataclass(frozen=True)
class Phase:
    way: RegionSet
    goal: RegionSet
    deadline: object = field(default_factory=PathUntilT)


@dataclass(frozen=True)
class RuntimePhase:
    exit_set: RegionSet
    payoff: Callable
    absolute_deadline: Optional[float]
    relative_duration: Optional[float]


@dataclass(frozen=True)
class MotionSpec:
    phases: tuple
    horizon: float
    eps: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))
        if not self.phases:
            raise SpecificationError("a motion spec needs at least one phase")
        dims = {d for p in self.phases for d in (p.way.dim, p.goal.dim) if d is not None}
        if len(dims) > 1:
            raise SpecificationError(f"phase sets have inconsistent dimensions {sorted(dims)}")
        if self.eps is not None and self.eps <= 0:
            raise SpecificationError("eps must be positive")
        last = -INF
        for i, p in enumerate(self.phases):
            dl = p.deadline
            if isinstance(dl, RelativeDwell):
                if i == 0 or i != len(self.phases) - 1:
                    raise SpecificationError("a dwell phase must be the last phase and follow another phase")
                if dl.duration <= 0:
                    raise SpecificationError("dwell duration must be positive")
                continue
            t = self.horizon if isinstance(dl, PathUntilT) else float(dl.time)
            if not isinstance(dl, (PathUntilT, ReachAtT)):
                raise SpecificationError(f"unknown deadline {dl!r}")
            if t > self.horizon + 1e-12:
                raise SpecificationError("phase deadline exceeds the horizon")
            if t < last:
                raise SpecificationError("phase deadlines must be nondecreasing")
            last = t

    @property
    def n(self) -> int:
        return len(self.phases)

    @property
    def dim(self) -> Optional[int]:
        for p in self.phases:
            for s in (p.way, p.goal):
                if s.dim is not None:
                    return s.dim
        return None

    @property
    def kind(self) -> str:
        kinds = [type(p.deadline) for p in self.phases]
        if all(k is PathUntilT for k in kinds):
            return "path"
        if all(k is ReachAtT for k in kinds):
            return "reach"
        if kinds == [PathUntilT, RelativeDwell]:
            return "mixed"
        return "general"

    def deadline(self, i: int) -> Optional[float]:
        """Absolute deadline of phase ``i`` (0-based); None for a relative dwell."""
        dl = self.phases[i].deadline
        if isinstance(dl, PathUntilT):
            return float(self.horizon)
        if isinstance(dl, ReachAtT):
            return float(dl.time)
        return None

    @property
    def final_time(self) -> float:
        dl = self.phases[-1].deadline
        if isinstance(dl, RelativeDwell):
            return self.horizon + dl.duration
        return float(self.horizon)

    def with_eps(self, eps: float) -> "MotionSpec":
        return MotionSpec(self.phases, self.horizon, eps)

    def runtime_phases(self, mode: str = "indicator", eps: Optional[float] = None) -> list[RuntimePhase]:
        """Exit sets and payoffs per phase.

        ``mode="indicator"`` uses the sets as given; ``mode="mollified"``
        replaces each path-phase goal by its eroded core and the indicator by
        the Lipschitz ramp.
        """
        if mode not in ("indicator", "mollified"):
            raise ValueError(f"unknown payoff mode {mode!r}")
        eps = self.eps if eps is None else eps
        if mode == "mollified" and eps is None:
            raise SpecificationError("mollified payoffs need eps")
        out = []
        for i, p in enumerate(self.phases):
            dl = p.deadline
            if isinstance(dl, PathUntilT):
                if mode == "mollified":
                    mp = MollifiedPayoff(p.goal, eps)
                    A = difference(p.way, mp.core)
                    pay = mp
                else:
                    A = difference(p.way, p.goal)
                    pay = indicator(p.goal)
            else:
                A = p.way
                pay = indicator(intersection(p.goal, p.way))
            rel = dl.duration if isinstance(dl, RelativeDwell) else None
            out.append(RuntimePhase(A, pay, self.deadline(i), rel))
        return out


@dataclass
class ExitTimeRecord:
    theta: np.ndarray
    tau: np.ndarray
    t0: float

    def phase_index_at(self, s: float) -> int:
        """0-based index of the phase active at time ``s`` (``n`` once all are done)."""
        passed = np.asarray(self.tau) <= s
        return int(np.argmin(passed)) if not passed.all() else len(self.tau)


def _membership(traj: TrajectorySample, sets: Sequence[RegionSet], start: int) -> np.ndarray:
    xs = traj.states[start:]
    return np.stack([np.asarray(s.contains(xs), dtype=bool).reshape(-1) for s in sets]).astype(np.uint8)


def _start_step(traj: TrajectorySample, t0: Optional[float]) -> int:
    if t0 is None:
        return 0
    j = (t0 - traj.t0) / traj.dt
    k = int(round(j))
    if abs(j - k) > 1e-6 or k < 0 or k >= traj.states.shape[0]:
        raise ValueError("t0 is not a step time of the trajectory")
    return k


def _deadline_steps(deadlines, t0: float, dt: float, n: int) -> np.ndarray:
    out = np.full(n, -1, dtype=np.int64)
    if deadlines is None:
        return out
    for i, d in enumerate(deadlines):
        if d is not None and np.isfinite(d):
            out[i] = max(int(round((d - t0) / dt)), 0)
    return out


def sequential_exit_times(traj: TrajectorySample, sets: Sequence[RegionSet], t0: Optional[float] = None,
                          deadlines: Optional[Sequence[float]] = None) -> ExitTimeRecord:
    """Sequential exit times through ``sets`` in order, starting at ``t0``.

    ``theta[i]`` is the first step time at or after ``theta[i-1]`` whose state
    lies outside ``sets[i]`` (``inf`` if none within the trajectory).
    ``tau`` clips ``theta`` at the optional deadlines without affecting theta.
    """
    start = _start_step(traj, t0)
    t0 = traj.t0 + start * traj.dt
    inside = _membership(traj, sets, start)[None]
    steps = kernels.exit_scan(inside, np.full(len(sets), -1, dtype=np.int64), restart_at_tau=False)[0]
    theta = np.where(steps >= 0, traj.t0 + (start + steps) * traj.dt, INF)
    tau = theta.copy()
    if deadlines is not None:
        tau = np.minimum(theta, [INF if d is None else d for d in deadlines])
    return ExitTimeRecord(theta, tau, t0)


def chained_exit_times(traj: TrajectorySample, sets: Sequence[RegionSet], deadlines: Sequence[Optional[float]],
                       t0: Optional[float] = None) -> ExitTimeRecord:
    """Exit times where the search for exit ``i`` restarts at ``tau_{i-1}``."""
    start = _start_step(traj, t0)
    t0 = traj.t0 + start * traj.dt
    inside = _membership(traj, sets, start)[None]
    dsteps = _deadline_steps(deadlines, t0, traj.dt, len(sets))
    if np.any(dsteps >= inside.shape[-1]):
        raise ValueError("trajectory ends before a deadline")
    steps = kernels.exit_scan(inside, dsteps, restart_at_tau=True)[0]
    theta = np.where(steps >= 0, traj.t0 + (start + steps) * traj.dt, INF)
    tau = np.array([min(th, INF if d is None else d) for th, d in zip(theta, deadlines)])
    # snap tau to the step grid
    tau = np.where(np.isfinite(tau), traj.t0 + np.rint((tau - traj.t0) / traj.dt) * traj.dt, tau)
    return ExitTimeRecord(theta, tau, t0)


def _state_at_time(traj: TrajectorySample, s: float) -> np.ndarray:
    j = int(round((s - traj.t0) / traj.dt))
    if j >= traj.states.shape[0]:
        raise ValueError("trajectory ends before a required time")
    return traj.states[j]


def event_indicator_path(traj: TrajectorySample, spec: MotionSpec) -> int:
    """1 iff the path visits every goal in order inside the way sets before the horizon."""
    if spec.kind != "path":
        raise SpecificationError("path indicator needs PathUntilT phases only")
    sets = [difference(p.way, p.goal) for p in spec.phases]
    rec = sequential_exit_times(traj, sets)
    T = float(spec.horizon)
    for th, p in zip(rec.theta, spec.phases):
        eta = min(th, T)
        if not p.goal.contains(_state_at_time(traj, eta)):
            return 0
    return 1


def event_indicator_reach(traj: TrajectorySample, spec: MotionSpec) -> int:
    """1 iff ``X_{T_i}`` is in ``G_i`` and the path stays in ``W_i`` on ``[T_{i-1}, T_i]`` for all i."""
    if spec.kind != "reach":
        raise SpecificationError("reach indicator needs ReachAtT phases only")
    deadlines = [spec.deadline(i) for i in range(spec.n)]
    rec = chained_exit_times(traj, [p.way for p in spec.phases], deadlines)
    for tau, p in zip(rec.tau, spec.phases):
        x = _state_at_time(traj, tau)
        if not (p.goal.contains(x) and p.way.contains(x)):
            return 0
    return 1


def event_indicator_mixed(traj: TrajectorySample, spec: MotionSpec) -> int:
    """Path phase then dwell: reach the first goal by the horizon, then stay in the dwell set.

    The dwell window is relative to the hitting time and includes both endpoints.
    """
    if spec.kind != "mixed":
        raise SpecificationError("mixed indicator needs exactly a PathUntilT phase followed by a RelativeDwell")
    p1, p2 = spec.phases
    T1 = float(spec.horizon)
    rec1 = sequential_exit_times(traj, [difference(p1.way, p1.goal)])
    tau1 = min(rec1.theta[0], T1)
    x1 = _state_at_time(traj, tau1)
    if not p1.goal.contains(x1):
        return 0
    end = tau1 + p2.deadline.duration
    rec2 = chained_exit_times(traj, [p2.way], [end], t0=tau1)
    x2 = _state_at_time(traj, rec2.tau[0])
    return int(bool(p2.goal.contains(x2) and p2.way.contains(x2)))


def event_indicator(traj: TrajectorySample, spec: MotionSpec) -> int:
    return {"path": event_indicator_path, "reach": event_indicator_reach,
            "mixed": event_indicator_mixed}[spec.kind](traj, spec) if spec.kind != "general" else \
        int(chain_payoff(traj, spec) > 0.5)


def chain_payoff(traj: TrajectorySample, spec: MotionSpec, mode: str = "indicator") -> float:
    """``prod_i payoff_i(X_{tau_i})`` along one stored trajectory (chained convention)."""
    phases = spec.runtime_phases(mode)
    prod, start_t = 1.0, traj.t0
    for ph in phases:
        d = ph.absolute_deadline if ph.relative_duration is None else start_t + ph.relative_duration
        rec = chained_exit_times(traj, [ph.exit_set], [d], t0=start_t)
        tau = float(rec.tau[0])
        prod *= float(np.asarray(ph.payoff(_state_at_time(traj, tau)[None]))[0])
        if prod == 0.0:
            return 0.0
        start_t = tau
    return prod


class PhaseTracker:
    """Online, vectorised chained exit-time tracker for a batch of paths.

    Steps are counted from each path's own start time. ``observe`` must be
    called with consecutive step indices starting at 0.
    """

    def __init__(self, phases: Sequence[RuntimePhase], t_start, dt: float, n_paths: int,
                 start_phase=None, start_deadline=None, phase_start=None):
        self.phases = list(phases)
        self.n = len(self.phases)
        self.dt = float(dt)
        P = n_paths
        self.t_start = np.broadcast_to(np.asarray(t_start, float), (P,)).copy()
        self.phase = np.zeros(P, dtype=np.int64) if start_phase is None else np.array(start_phase, dtype=np.int64)
        self.prod = np.ones(P)
        self.done = self.phase >= self.n
        self.tau = np.full((P, self.n), INF)
        self.phase_start = self.t_start.copy() if phase_start is None else np.array(phase_start, float)
        self.deadline_step = np.full(P, np.iinfo(np.int64).max // 2, dtype=np.int64)
        if start_deadline is None:
            for k in np.unique(self.phase[~self.done]):
                sel = self.phase == k
                self._set_deadline(np.flatnonzero(sel), int(k), 0)
        else:
            sd = np.asarray(start_deadline, float)
            fin = np.isfinite(sd)
            self.deadline_step[fin] = np.rint((sd[fin] - self.t_start[fin]) / self.dt).astype(np.int64)

    @classmethod
    def from_spec(cls, spec: MotionSpec, t_start, dt: float, n_paths: int, mode: str = "indicator",
                  eps: Optional[float] = None, **kw) -> "PhaseTracker":
        return cls(spec.runtime_phases(mode, eps), t_start, dt, n_paths, **kw)

    def _set_deadline(self, ids: np.ndarray, k: int, j: int) -> None:
        ph = self.phases[k]
        if ph.relative_duration is not None:
            self.deadline_step[ids] = j + int(round(ph.relative_duration / self.dt))
        else:
            self.deadline_step[ids] = np.rint((ph.absolute_deadline - self.t_start[ids]) / self.dt).astype(np.int64)

    def observe(self, j: int, t: np.ndarray, x: np.ndarray, mask: Optional[np.ndarray] = None) -> None:
        """Process step ``j`` at times ``t`` and states ``x``; paths outside ``mask`` are left untouched."""
        for _ in range(self.n + 1):
            running = ~self.done if mask is None else (~self.done & mask)
            if not running.any():
                return
            changed = False
            for k in np.unique(self.phase[running]):
                k = int(k)
                ids = np.flatnonzero(running & (self.phase == k))
                ph = self.phases[k]
                out = ~np.asarray(ph.exit_set.contains(x[ids]), dtype=bool).reshape(-1)
                out |= j >= self.deadline_step[ids]
                if not out.any():
                    continue
                ids = ids[out]
                self.tau[ids, k] = t[ids]
                self.prod[ids] *= np.asarray(ph.payoff(x[ids]), float).reshape(-1)
                self.phase[ids] = k + 1
                self.phase_start[ids] = t[ids]
                if k + 1 < self.n:
                    self._set_deadline(ids, k + 1, j)
                self.done[ids] = (self.phase[ids] >= self.n) | (self.prod[ids] == 0.0)
                changed = True
            if not changed:
                return

    def current_deadline_time(self) -> np.ndarray:
        return self.t_start + self.deadline_step * self.dt
