"""Monte Carlo estimates of motion-planning success probabilities.

Every estimate is the sample mean of ``prod_i l_i(X_{tau_i})`` under the
Euler-Maruyama dynamics, with exit times tracked online by ``PhaseTracker``.
Random streams are derived from ``(seed, stream, block)`` so results do not
depend on how work is split across threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import Ball, RegionSet
from .grid import Grid, ValueField
from .motion import MotionSpec, PhaseTracker
from .sde import BLOCK_SIZE, NoiseSource, SdeModel, _em_batch, as_policy, n_steps_for, run_batch

Z95 = 1.96


@dataclass(frozen=True)
class ProbEstimate:
    p_hat: float
    n_paths: int
    ci_halfwidth: float
    seed: int
    dt: float
    truncated: int = 0

    @classmethod
    def from_samples(cls, values: np.ndarray, seed: int, dt: float, truncated: int = 0) -> "ProbEstimate":
        n = int(values.size)
        p = float(np.mean(values)) if n else 0.0
        p = min(max(p, 0.0), 1.0)
        return cls(p, n, ci_halfwidth(p, n), int(seed), float(dt), int(truncated))


def ci_halfwidth(p, n):
    return Z95 * np.sqrt(np.asarray(p) * (1.0 - np.asarray(p)) / n) if np.ndim(p) else Z95 * math.sqrt(p * (1.0 - p) / n)


def _final_steps(spec: MotionSpec, t0: float, dt: float) -> int:
    return n_steps_for(min(t0, spec.final_time), spec.final_time, dt) + 1


def _run_points(model, policy, spec, t0, points, n_paths, dt, seed, streams, mode, eps, sim_box=None):
    """Payoff samples for each start point, shape ``(len(points), n_paths)``."""
    points = np.asarray(points, float).reshape(len(streams), -1)
    keys, counts = [], []
    for s in streams:
        for b, start in enumerate(range(0, n_paths, BLOCK_SIZE)):
            keys.append(tuple(s) + (b,))
            counts.append(min(BLOCK_SIZE, n_paths - start))
    noise = NoiseSource(seed, keys, counts)
    X0 = np.repeat(points, n_paths, axis=0)
    P = X0.shape[0]
    tracker = PhaseTracker.from_spec(spec, t0, dt, P, mode=mode, eps=eps)
    res = run_batch(model, policy, t0, X0, _final_steps(spec, t0, dt), dt, noise, tracker=tracker, sim_box=sim_box)
    return tracker.prod.reshape(len(streams), n_paths), res.truncated.reshape(len(streams), n_paths)


def estimate_success(model: SdeModel, policy, spec: MotionSpec, t0: float, x0, n_paths: int, dt: float,
                     seed: int, mode: str = "indicator", eps: Optional[float] = None,
                     stream: tuple = (0,), sim_box=None) -> ProbEstimate:
    """Estimate ``P{X satisfies spec}`` from ``(t0, x0)`` under ``policy``."""
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    vals, trunc = _run_points(model, policy, spec, t0, np.atleast_1d(x0)[None], n_paths, dt, seed,
                              [tuple(stream)], mode, eps, sim_box)
    return ProbEstimate.from_samples(vals[0], seed, dt, int(trunc.sum()))


@dataclass
class FieldEstimate:
    field: ValueField
    ci_halfwidth: np.ndarray
    n_paths: int
    seed: int
    dt: float

    @property
    def values(self) -> np.ndarray:
        return self.field.values


def estimate_points(model, policy, spec, t0, points, n_paths, dt, seed, node_ids=None, mode="indicator",
                    eps=None, threads: int = 1, chunk_paths: int = 200_000):
    """Per-point estimates; point ``i`` uses stream ``(node_ids[i],)``."""
    points = np.asarray(points, float)
    if points.ndim == 1:
        points = points[:, None]
    ids = np.arange(len(points)) if node_ids is None else np.asarray(node_ids)
    per_chunk = max(1, chunk_paths // max(n_paths, 1))
    chunks = [slice(a, min(a + per_chunk, len(points))) for a in range(0, len(points), per_chunk)]
    policy = as_policy(policy, model)

    def work(sl):
        v, _ = _run_points(model, policy, spec, t0, points[sl], n_paths, dt, seed,
                           [(int(i),) for i in ids[sl]], mode, eps)
        return v.mean(axis=1)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(sl) for sl in chunks]
    p = np.clip(np.concatenate(parts) if parts else np.empty(0), 0.0, 1.0)
    return p, ci_halfwidth(p, n_paths)


def estimate_field(model: SdeModel, policy, spec: MotionSpec, t: float, grid: Grid, n_paths: int, dt: float,
                   seed: int, mode: str = "indicator", eps: Optional[float] = None, threads: int = 1) -> FieldEstimate:
    """Independent estimates at every grid node (node ``i`` uses stream ``(i,)``)."""
    if grid.dim != model.state_dim:
        raise ValueError("grid dimension does not match the model")
    p, ci = estimate_points(model, policy, spec, t, grid.flat_points(), n_paths, dt, seed,
                            mode=mode, eps=eps, threads=threads)
    return FieldEstimate(ValueField(grid, t, p), ci.reshape(grid.shape), n_paths, seed, dt)


# -- dynamic programming consistency ----------------------------------------


class ThetaRule:
    """Stopping rule evaluated online on the path prefix."""

    def hit(self, t: np.ndarray, x: np.ndarray, x0: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class StartTime(ThetaRule):
    def hit(self, t, x, x0):
        return np.ones(x.shape[0], dtype=bool)


@dataclass(frozen=True)
class FixedTime(ThetaRule):
    time: float

    def hit(self, t, x, x0):
        return np.asarray(t) >= self.time - 1e-12


@dataclass(frozen=True)
class BallExit(ThetaRule):
    """First exit of the open ball of ``radius`` around the start state."""

    radius: float

    def hit(self, t, x, x0):
        return ~np.asarray(Ball(tuple(np.asarray(x0, float)), self.radius, closed=False).contains(x), dtype=bool)


@dataclass(frozen=True)
class RegionExit(ThetaRule):
    region: RegionSet

    def hit(self, t, x, x0):
        return ~np.asarray(self.region.contains(x), dtype=bool).reshape(-1)


@dataclass(frozen=True)
class DppResult:
    residual: float
    sigma: float
    n_outer: int
    n_inner: int
    n_stopped: int
    budget_exhausted: bool

    @property
    def z(self) -> float:
        if self.sigma == 0.0:
            return 0.0 if self.residual == 0.0 else math.inf
        return self.residual / self.sigma

    def within(self, k: float = 3.0) -> bool:
        return abs(self.residual) <= k * self.sigma


def dpp_residual(model: SdeModel, policy, spec: MotionSpec, theta_rule: ThetaRule, t0: float, x0,
                 n_outer: int = 1000, n_inner: int = 100, dt: float = 1e-3, seed: int = 0,
                 mode: str = "indicator", eps: Optional[float] = None,
                 budget: Optional[int] = None) -> DppResult:
    """Nested Monte Carlo check of the tower identity for a fixed policy.

    For outer path ``i`` stopped at ``theta``, the inner mean from
    ``(theta, X_theta)`` (carrying the tracker state) times the payoff collected
    before ``theta`` estimates ``J(t0, x0)``. It is paired with a direct
    estimate from ``(t0, x0)`` that uses the same inner random stream, so the
    residual is exactly zero when ``theta = t0``.

    ``budget`` caps the total number of inner paths. When it binds, the inner
    sample size is reduced and ``sigma`` is widened by the square root of the
    shortfall.
    """
    x0 = np.atleast_1d(np.asarray(x0, float))
    policy = as_policy(policy, model)
    d = model.state_dim
    n_steps = _final_steps(spec, t0, dt)

    # outer paths up to theta
    tr = PhaseTracker.from_spec(spec, t0, dt, n_outer, mode=mode, eps=eps)
    noise = NoiseSource.blocks(seed, n_outer, (0,))
    x = np.broadcast_to(x0, (n_outer, d)).copy()
    stopped = np.zeros(n_outer, dtype=bool)
    theta = np.full(n_outer, np.nan)
    x_theta = np.empty((n_outer, d))
    t0v = np.full(n_outer, float(t0))
    sqdt = math.sqrt(dt)
    for j in range(n_steps + 1):
        t = t0v + j * dt
        hit = theta_rule.hit(t, x, x0) & ~tr.done & ~stopped
        if hit.any():
            stopped |= hit
            theta[hit] = t[hit]
            x_theta[hit] = x[hit]
        act = ~tr.done & ~stopped
        tr.observe(j, t, x, mask=act)
        act = ~tr.done & ~stopped
        if not act.any() or j == n_steps:
            break
        z = noise.draw(model.noise_dim) * sqdt
        ia = np.flatnonzero(act)
        u = model.clamp(np.asarray(policy(t[ia], x[ia], tr.phase[ia], tr.phase_start[ia]), float))
        x[ia] = _em_batch(model, x[ia], u, dt, z[ia])

    sid = np.flatnonzero(stopped)
    exhausted = False
    m = n_inner
    if budget is not None and sid.size * n_inner > budget:
        m = max(1, budget // max(sid.size, 1))
        exhausted = True

    def grouped_noise(ids):
        return NoiseSource(seed, [(1, int(i), 0) for i in ids], [m] * len(ids))

    if m > BLOCK_SIZE:
        raise ValueError(f"n_inner must not exceed {BLOCK_SIZE}")

    # direct estimates from (t0, x0), one group per outer index
    all_ids = np.arange(n_outer)
    trd = PhaseTracker.from_spec(spec, t0, dt, n_outer * m, mode=mode, eps=eps)
    run_batch(model, policy, t0, np.broadcast_to(x0, (n_outer * m, d)), n_steps, dt, grouped_noise(all_ids),
              tracker=trd)
    direct = trd.prod.reshape(n_outer, m).mean(axis=1)

    outer = tr.prod.copy()
    if sid.size:
        rep = lambda a: np.repeat(a[sid], m, axis=0)
        tri = PhaseTracker(tr.phases, rep(theta), dt, sid.size * m, start_phase=rep(tr.phase),
                           start_deadline=rep(tr.current_deadline_time()), phase_start=rep(tr.phase_start))
        run_batch(model, policy, rep(theta), rep(x_theta), n_steps, dt, grouped_noise(sid), tracker=tri)
        outer[sid] = tr.prod[sid] * tri.prod.reshape(sid.size, m).mean(axis=1)
    R = outer - direct
    sigma = float(np.std(R, ddof=1) / math.sqrt(n_outer)) if n_outer > 1 else math.inf
    if exhausted:
        sigma *= math.sqrt(n_inner / m)
    return DppResult(float(R.mean()), sigma, n_outer, m, int(sid.size), exhausted)
