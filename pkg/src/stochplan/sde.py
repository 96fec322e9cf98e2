"""Controlled SDE models and Euler-Maruyama simulation.

Model callables are vectorised over a leading batch axis:
``drift(x, u)`` maps ``(P, d), (P, m) -> (P, d)`` and ``diffusion(x, u)`` maps
to ``(P, d, dz)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

# Paths are grouped in blocks that share one generator; the block size is part
# of the reproducibility contract (changing it changes the streams).
BLOCK_SIZE = 8192


class ModelEvaluationError(FloatingPointError):
    pass


@dataclass(frozen=True)
class AffineParts:
    """Control-affine decomposition at a batch of states.

    ``drift = f0 + G @ u`` and ``diag(sigma sigma^T) = a0 + Ad @ u``.
    Shapes: f0, a0 ``(P, d)``; G, Ad ``(P, d, m)``.
    """

    f0: np.ndarray
    G: np.ndarray
    a0: np.ndarray
    Ad: np.ndarray


@dataclass(frozen=True)
class SdeModel:
    state_dim: int
    noise_dim: int
    control_dim: int
    drift: Callable = field(repr=False)
    diffusion: Callable = field(repr=False)
    control_lo: tuple = (0.0,)
    control_hi: tuple = (0.0,)
    lipschitz_hint: Optional[float] = None
    # Optional control-affine structure with diagonal sigma sigma^T.
    affine: Optional[Callable[[np.ndarray], AffineParts]] = field(default=None, repr=False)
    # Lower bound applied to the state after every step (None: no projection).
    state_floor: Optional[tuple] = None
    name: str = "model"

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.control_lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.control_hi))
        if len(lo) != self.control_dim or len(hi) != self.control_dim:
            raise ValueError("control box dimension does not match control_dim")
        if any(h < l for l, h in zip(lo, hi)):
            raise ValueError("control box is empty")
        if not all(np.isfinite(lo + hi)):
            raise ValueError("control box must be bounded")
        object.__setattr__(self, "control_lo", lo)
        object.__setattr__(self, "control_hi", hi)
        for n in ("state_dim", "noise_dim", "control_dim"):
            if getattr(self, n) < 1:
                raise ValueError(f"{n} must be positive")

    def with_control_box(self, lo, hi) -> "SdeModel":
        return dataclasses.replace(self, control_lo=tuple(np.atleast_1d(lo)), control_hi=tuple(np.atleast_1d(hi)))

    def clamp(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, np.asarray(self.control_lo), np.asarray(self.control_hi))

    def in_box(self, u) -> bool:
        u = np.asarray(u, float)
        return bool(np.all(u >= np.asarray(self.control_lo)) and np.all(u <= np.asarray(self.control_hi)))

    def sigma_sigma_t(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        s = self.diffusion(x, u)
        return s @ np.swapaxes(s, -1, -2)


def _check_finite(arr: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(arr)
    if bad.any():
        coord = np.argwhere(bad)[0]
        raise ModelEvaluationError(f"{what} is not finite at coordinate {tuple(int(c) for c in coord[1:])}")


def em_step(model: SdeModel, x, u, dt: float, dW) -> np.ndarray:
    """One Euler-Maruyama step ``x + f(x,u) dt + sigma(x,u) dW`` for a single state."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, float).reshape(1, model.state_dim)
    u = np.asarray(u, float).reshape(1, model.control_dim)
    if not model.in_box(u):
        raise ValueError("control outside the control box")
    dW = np.asarray(dW, float).reshape(1, model.noise_dim)
    out = _em_batch(model, x, u, dt, dW)
    return out[0]


def _em_batch(model: SdeModel, x, u, dt, dW) -> np.ndarray:
    f = np.asarray(model.drift(x, u), float)
    _check_finite(f, "drift")
    s = np.asarray(model.diffusion(x, u), float)
    _check_finite(s, "diffusion")
    out = x + f * dt + np.einsum("pij,pj->pi", s, dW)
    if model.state_floor is not None:
        out = np.maximum(out, np.asarray(model.state_floor))
    return out


class NoiseSource:
    """Standard-normal draws for a batch of paths, one generator per stream key.

    ``keys[i]`` is a spawn key; stream ``i`` serves ``counts[i]`` consecutive
    paths. Each step draws a fresh ``(count, dz)`` block from every stream
    regardless of which paths are still alive, so paths sharing a seed stay
    coupled across runs.
    """

    def __init__(self, seed: int, keys: Sequence[tuple], counts: Sequence[int]):
        self.seed = int(seed)
        self.counts = [int(c) for c in counts]
        self.rngs = [np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=tuple(k))))
                     for k in keys]

    @classmethod
    def blocks(cls, seed: int, n_paths: int, stream: tuple = (0,)) -> "NoiseSource":
        counts, keys = [], []
        for b, start in enumerate(range(0, n_paths, BLOCK_SIZE)):
            counts.append(min(BLOCK_SIZE, n_paths - start))
            keys.append(tuple(stream) + (b,))
        return cls(seed, keys, counts)

    @property
    def n_paths(self) -> int:
        return sum(self.counts)

    def draw(self, dz: int) -> np.ndarray:
        if len(self.rngs) == 1:
            return self.rngs[0].standard_normal((self.counts[0], dz))
        return np.concatenate([r.standard_normal((c, dz)) for r, c in zip(self.rngs, self.counts)])


class ConstantPolicy:
    def __init__(self, u):
        self.u = np.atleast_1d(np.asarray(u, float))

    def __call__(self, t, x, phase=None, phase_start=None):
        return np.broadcast_to(self.u, (x.shape[0], self.u.size))


class FunctionPolicy:
    """Wraps ``fn(t, x) -> u`` (vectorised) as a Markov feedback policy."""

    def __init__(self, fn: Callable):
        self.fn = fn

    def __call__(self, t, x, phase=None, phase_start=None):
        return np.asarray(self.fn(t, x), float).reshape(x.shape[0], -1)


def as_policy(policy, model: SdeModel):
    if policy is None:
        return ConstantPolicy(np.asarray(model.control_lo))
    if callable(policy):
        return policy
    return ConstantPolicy(policy)


@dataclass
class TrajectorySample:
    t0: float
    x0: np.ndarray
    dt: float
    states: np.ndarray
    controls: np.ndarray
    seed: int
    truncated: bool = False

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.states.shape[0])

    @property
    def horizon(self) -> float:
        return self.t0 + self.dt * (self.states.shape[0] - 1)

    def step_of(self, s: float) -> int:
        j = int(np.floor((s - self.t0) / self.dt + 1e-9))
        return min(max(j, 0), self.states.shape[0] - 1)

    def at(self, s: float) -> np.ndarray:
        """State at time ``s``; the path is held at ``x0`` for ``s <= t0``."""
        if s <= self.t0:
            return np.array(self.x0, copy=True)
        return self.states[self.step_of(s)]


@dataclass
class BatchResult:
    states: Optional[np.ndarray]  # (P, steps+1, d) when recorded
    controls: Optional[np.ndarray]  # (P, steps, m) when recorded
    final: np.ndarray
    truncated: np.ndarray
    steps_run: int


def n_steps_for(t0: float, horizon: float, dt: float) -> int:
    if horizon < t0:
        raise ValueError("horizon precedes start time")
    n = (horizon - t0) / dt
    k = int(round(n))
    if abs(n - k) > 1e-6 * max(1.0, n):
        k = int(np.ceil(n))
    return k


def run_batch(model: SdeModel, policy, t0, x0: np.ndarray, n_steps: int, dt: float,
              noise: NoiseSource, tracker=None, record: bool = False,
              sim_box: Optional[tuple] = None) -> BatchResult:
    """Simulate ``P`` paths for up to ``n_steps`` steps.

    ``t0`` may be a scalar or a per-path array of start times. When a tracker
    is given it is consulted at every step (including the start) and the run
    stops early once it reports every path finished; its phase information is
    forwarded to the policy.
    """
    x = np.array(x0, dtype=float, copy=True)
    P = x.shape[0]
    if noise.n_paths != P:
        raise ValueError("noise source size does not match batch")
    t_start = np.broadcast_to(np.asarray(t0, float), (P,)).copy()
    policy = as_policy(policy, model)
    sqdt = np.sqrt(dt)
    truncated = np.zeros(P, dtype=bool)
    lo_box = hi_box = None
    if sim_box is not None:
        lo_box, hi_box = np.asarray(sim_box[0], float), np.asarray(sim_box[1], float)
    states = controls = None
    if record:
        states = np.empty((P, n_steps + 1, model.state_dim))
        states[:, 0] = x
        controls = np.empty((P, n_steps, model.control_dim))
    alive = np.ones(P, dtype=bool)
    if tracker is not None:
        tracker.observe(0, t_start, x)
        alive = ~tracker.done
    steps_run = 0
    for j in range(n_steps):
        if tracker is not None and not alive.any() and not record:
            break
        t = t_start + j * dt
        z = noise.draw(model.noise_dim) * sqdt
        if tracker is not None:
            phase, pstart = tracker.phase, tracker.phase_start
        else:
            phase, pstart = np.zeros(P, dtype=np.int64), t_start
        if record or alive.all():
            u = model.clamp(np.asarray(policy(t, x, phase, pstart), float))
            x = _em_batch(model, x, u, dt, z)
            if record:
                controls[:, j] = u
                states[:, j + 1] = x
        else:
            ia = np.flatnonzero(alive)
            u = model.clamp(np.asarray(policy(t[ia], x[ia], phase[ia], pstart[ia]), float))
            x[ia] = _em_batch(model, x[ia], u, dt, z[ia])
        if lo_box is not None:
            truncated |= np.any((x < lo_box) | (x > hi_box), axis=-1)
        steps_run = j + 1
        if tracker is not None:
            tracker.observe(j + 1, t_start + (j + 1) * dt, x)
            alive = ~tracker.done
    return BatchResult(states, controls, x, truncated, steps_run)


def simulate_paths(model: SdeModel, policy, t0: float, x0, horizon: float, dt: float, seed: int,
                   n_paths: int, sim_box=None, tracker=None, stream: tuple = (0,)) -> list[TrajectorySample]:
    n_steps = n_steps_for(t0, horizon, dt)
    x0 = np.atleast_1d(np.asarray(x0, float))
    X0 = np.broadcast_to(x0, (n_paths, model.state_dim))
    noise = NoiseSource.blocks(seed, n_paths, stream)
    res = run_batch(model, policy, t0, X0, n_steps, dt, noise, tracker=tracker, record=True, sim_box=sim_box)
    return [TrajectorySample(float(t0), x0.copy(), float(dt), res.states[p], res.controls[p], int(seed),
                             bool(res.truncated[p])) for p in range(n_paths)]


def simulate_path(model: SdeModel, policy, t0: float, x0, horizon: float, dt: float, seed: int,
                  sim_box=None, tracker=None) -> TrajectorySample:
    """One reproducible sample path on ``[t0, horizon]``.

    Controls come from ``policy(t, x, phase, phase_start)`` (or a constant
    vector) and are clamped to the control box.
    """
    return simulate_paths(model, policy, t0, x0, horizon, dt, seed, 1, sim_box=sim_box, tracker=tracker)[0]
