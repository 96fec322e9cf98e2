"""Bundled models and problems: the bistable gene switch and 1D calibration fixtures."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import ball, box, complement, half_space, union
from .grid import Grid
from .hjb import ChainProblem
from .motion import MotionSpec, PathUntilT, Phase, ReachAtT, RelativeDwell
from .sde import AffineParts, SdeModel


# -- bistable switch ---------------------------------------------------------


@dataclass(frozen=True)
class BioSwitchParams:
    theta1: float = 40.0
    theta2: float = 40.0
    n1: float = 4.0
    n2: float = 6.0
    k1: float = 4.0
    k2: float = 4.0
    mu_x: float = 0.04
    mu_y: float = 0.04
    ux_box: tuple = (0.0, 2.0)
    uy_box: tuple = (0.0, 2.0)

    def __post_init__(self):
        for name in ("theta1", "theta2", "n1", "n2", "k1", "k2", "mu_x", "mu_y"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("ux_box", "uy_box"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} must be a nonnegative interval")
            object.__setattr__(self, name, (float(lo), float(hi)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ux_box"], d["uy_box"] = list(self.ux_box), list(self.uy_box)
        return d


def hill(v, theta, n, k):
    """Repression rate per unit control ``theta^n k / (v^n + theta^n)``."""
    v = np.maximum(np.asarray(v, float), 0.0)
    tn = theta ** n
    return tn * k / (v ** n + tn)


def bio_switch_model(params: BioSwitchParams = BioSwitchParams()) -> SdeModel:
    p = params

    def rates(x):
        gx = hill(x[:, 1], p.theta1, p.n1, p.k1)  # production of X, repressed by Y
        gy = hill(x[:, 0], p.theta2, p.n2, p.k2)
        return gx, gy

    def drift(x, u):
        gx, gy = rates(x)
        return np.stack([gx * u[:, 0] - p.mu_x * x[:, 0], gy * u[:, 1] - p.mu_y * x[:, 1]], axis=-1)

    def diffusion(x, u):
        gx, gy = rates(x)
        s = np.zeros((x.shape[0], 2, 4))
        s[:, 0, 0] = np.sqrt(np.maximum(gx * u[:, 0], 0.0))
        s[:, 0, 1] = np.sqrt(np.maximum(p.mu_x * x[:, 0], 0.0))
        s[:, 1, 2] = np.sqrt(np.maximum(gy * u[:, 1], 0.0))
        s[:, 1, 3] = np.sqrt(np.maximum(p.mu_y * x[:, 1], 0.0))
        return s

    def affine(x):
        gx, gy = rates(x)
        P = x.shape[0]
        f0 = np.stack([-p.mu_x * x[:, 0], -p.mu_y * x[:, 1]], axis=-1)
        G = np.zeros((P, 2, 2))
        G[:, 0, 0] = gx
        G[:, 1, 1] = gy
        a0 = np.stack([np.maximum(p.mu_x * x[:, 0], 0.0), np.maximum(p.mu_y * x[:, 1], 0.0)], axis=-1)
        return AffineParts(f0, G, a0, G.copy())

    lo = (p.ux_box[0], p.uy_box[0])
    hi = (p.ux_box[1], p.uy_box[1])
    return SdeModel(2, 4, 2, drift, diffusion, lo, hi, affine=affine, state_floor=(0.0, 0.0), name="bio_switch")


def _jacobian(fun, x, h=1e-6):
    J = np.empty((x.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return J


@dataclass(frozen=True)
class Equilibrium:
    x: tuple
    stable: bool
    eigenvalues: tuple


def equilibria(params: BioSwitchParams = BioSwitchParams(), u=(1.0, 1.0), lo=0.0, hi=120.0,
               n_starts: int = 13, tol: float = 1e-10) -> list[Equilibrium]:
    """Roots of the drift at fixed ``u`` by damped Newton from a grid of starts."""
    model = bio_switch_model(params)
    uu = np.asarray(u, float)[None]
    fun = lambda x: model.drift(x[None], uu)[0]
    roots = []
    for a in np.linspace(lo, hi, n_starts):
        for b in np.linspace(lo, hi, n_starts):
            x = np.array([a, b], float)
            for _ in range(200):
                F = fun(x)
                if np.linalg.norm(F) < tol:
                    break
                try:
                    step = np.linalg.solve(_jacobian(fun, x), -F)
                except np.linalg.LinAlgError:
                    break
                lam = 1.0
                while lam > 1e-6:
                    xn = np.maximum(x + lam * step, 0.0)
                    if np.linalg.norm(fun(xn)) < np.linalg.norm(F):
                        break
                    lam *= 0.5
                x = xn
            if np.linalg.norm(fun(x)) < 1e-8 and not any(np.linalg.norm(x - r) < 1e-4 for r in roots):
                roots.append(x)
    out = []
    for r in sorted(roots, key=lambda r: (r[0], r[1])):
        ev = np.linalg.eigvals(_jacobian(fun, r))
        out.append(Equilibrium(tuple(float(v) for v in r), bool(np.all(ev.real < 0)),
                               tuple(complex(e) for e in ev)))
    return out


@dataclass(frozen=True)
class SwitchGeometry:
    """Reconstructed avoid/target/maintenance sets (radii are defaults, not published values)."""

    b_radius: float = 5.0
    c_radius: float = 12.0
    a_radius: float = 30.0
    strip: float = 8.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SwitchScenario:
    name: str
    params: BioSwitchParams
    problem: ChainProblem
    sets: dict
    equilibria: list
    geometry: SwitchGeometry
    T1: float
    T2: float

    def manifest(self) -> dict:
        return {
            "scenario": self.name,
            "params": self.params.to_dict(),
            "equilibria": [{"x": list(e.x), "stable": e.stable} for e in self.equilibria],
            "geometry": dict(self.geometry.to_dict(), reconstruction=True,
                             note="set shapes and radii are reconstructions; they are not given numerically"),
            "T1": self.T1, "T2": self.T2,
        }


def switch_sets(params: BioSwitchParams, geometry: SwitchGeometry = SwitchGeometry()):
    eq = equilibria(params)
    saddle = [e for e in eq if not e.stable]
    stable = [e for e in eq if e.stable]
    if len(saddle) != 1 or len(stable) != 2:
        raise RuntimeError(f"expected two stable equilibria and one saddle, found {eq}")
    c = saddle[0].x
    B = ball(c, geometry.b_radius, closed=True)
    C = ball(c, geometry.c_radius, closed=False)
    A = union(*(ball(e.x, geometry.a_radius, closed=True) for e in stable),
              half_space((1.0, 0.0), geometry.strip), half_space((0.0, 1.0), geometry.strip))
    return {"A": A, "B": B, "C": C}, eq


def bio_switch_problem(params: BioSwitchParams, name: str = "custom", T1: float = 60.0, T2: float = 120.0,
                       nodes: int = 121, roi=(0.0, 120.0), margin: float = 0.0,
                       geometry: SwitchGeometry = SwitchGeometry(), eps: Optional[float] = None,
                       dt_pde: Optional[float] = None, snapshot_every: Optional[float] = 1.0,
                       method: str = "auto") -> SwitchScenario:
    sets, eq = switch_sets(params, geometry)
    spec = MotionSpec((Phase(complement(sets["A"]), sets["B"], PathUntilT()),
                       Phase(sets["C"], sets["C"], RelativeDwell(T2))), horizon=T1, eps=eps)
    grid = Grid.covering((roi[0], roi[0]), (roi[1], roi[1]), (nodes, nodes), margin=margin)
    prob = ChainProblem(bio_switch_model(params), spec, grid, dt_pde=dt_pde, snapshot_every=snapshot_every,
                        method=method)
    return SwitchScenario(name, params, prob, sets, eq, geometry, T1, T2)


def bio_switch_scenarios(**kw) -> list[SwitchScenario]:
    """Scenario 1: both repressors controlled in [0, 2]. Scenario 2: u_y fixed at 1."""
    s1 = BioSwitchParams(ux_box=(0.0, 2.0), uy_box=(0.0, 2.0))
    s2 = BioSwitchParams(ux_box=(0.0, 2.0), uy_box=(1.0, 1.0))
    return [bio_switch_problem(s1, "scenario1", **kw), bio_switch_problem(s2, "scenario2", **kw)]


# -- calibration fixtures ----------------------------------------------------


def brownian_model(sigma: float = 1.0, dim: int = 1) -> SdeModel:
    """Driftless ``dX = sigma dW`` (the control is a dummy singleton)."""

    def drift(x, u):
        return np.zeros_like(x)

    def diffusion(x, u):
        return np.broadcast_to(sigma * np.eye(dim), (x.shape[0], dim, dim)).copy()

    def affine(x):
        P = x.shape[0]
        return AffineParts(np.zeros((P, dim)), np.zeros((P, dim, 1)), np.full((P, dim), sigma ** 2),
                           np.zeros((P, dim, 1)))

    return SdeModel(dim, dim, 1, drift, diffusion, (0.0,), (0.0,), lipschitz_hint=0.0, affine=affine,
                    name="brownian")


def controlled_drift_model(u_max: float = 1.0, sigma: float = 0.5) -> SdeModel:
    """``dX = u dt + sigma dW`` with ``u`` in ``[-u_max, u_max]``."""

    def drift(x, u):
        return u[:, :1] + 0.0 * x

    def diffusion(x, u):
        return np.full((x.shape[0], 1, 1), sigma)

    def affine(x):
        P = x.shape[0]
        return AffineParts(np.zeros((P, 1)), np.ones((P, 1, 1)), np.full((P, 1), sigma ** 2), np.zeros((P, 1, 1)))

    return SdeModel(1, 1, 1, drift, diffusion, (-u_max,), (u_max,), affine=affine, name="controlled_drift")


@dataclass
class CalibrationProblem:
    name: str
    problem: ChainProblem
    # closed-form limit where one exists
    analytic: Optional[Callable] = None
    notes: str = ""
    mc_dt: float = 5e-4

    def mc_oracle(self, points, n_paths: int = 10_000, seed: int = 0, dt: Optional[float] = None,
                  policy=None, mode: str = "mollified"):
        """Monte Carlo estimates ``(p, ci)`` of the same problem at ``points`` (t = 0)."""
        from .montecarlo import estimate_points

        prob = self.problem
        return estimate_points(prob.model, policy, prob.spec, 0.0, np.asarray(points, float).reshape(-1, prob.grid.dim),
                               n_paths, self.mc_dt if dt is None else dt, seed, mode=mode, eps=prob.eps)


def exit_problem(T: float = 1.5, nodes: int = 201, dt_pde: Optional[float] = None) -> CalibrationProblem:
    """Unit Brownian motion started in (0, 1): reach [1, 2] before leaving (0, 2)."""
    spec = MotionSpec((Phase(box((0.0,), (2.0,), closed=False), box((1.0,), (2.0,))),), horizon=T)
    grid = Grid((0.0,), (2.0,), (nodes,))
    prob = ChainProblem(brownian_model(1.0), spec, grid, dt_pde=dt_pde, snapshot_every=T)
    return CalibrationProblem("brownian_exit", prob, analytic=lambda x: np.clip(np.asarray(x, float), 0.0, 1.0),
                              notes="as T grows the success probability tends to x on [0, 1]")


def controlled_reach_problem(u_max: float = 1.0, sigma: float = 0.5, T: float = 1.0,
                             nodes: int = 201) -> CalibrationProblem:
    spec = MotionSpec((Phase(box((0.0,), (2.0,), closed=False), box((1.0,), (2.0,))),), horizon=T)
    grid = Grid((0.0,), (2.0,), (nodes,))
    prob = ChainProblem(controlled_drift_model(u_max, sigma), spec, grid, snapshot_every=T / 20)
    return CalibrationProblem("controlled_reach", prob)


def two_phase_chain(T1: float = 0.5, T2: float = 1.0, nodes: int = 161, whole_box: bool = False,
                    sigma: float = 0.5) -> CalibrationProblem:
    """Be in [0.5, 1.5] at T1 and in [1.5, 2.5] at T2 while staying inside (-1, 3)."""
    W = box((-1.0,), (3.0,), closed=False)
    g1, g2 = (box((0.5,), (1.5,)), box((1.5,), (2.5,)))
    if whole_box:
        W = box((-1.5,), (3.5,), closed=False)
        g1 = g2 = box((-1.5,), (3.5,))
    spec = MotionSpec((Phase(W, g1, ReachAtT(T1)), Phase(W, g2, ReachAtT(T2))), horizon=T2)
    grid = Grid((-1.0,), (3.0,), (nodes,))
    prob = ChainProblem(controlled_drift_model(1.0, sigma), spec, grid, snapshot_every=T2 / 20)
    return CalibrationProblem("two_phase" + ("_whole" if whole_box else ""), prob)


def calibration_models() -> list[CalibrationProblem]:
    return [exit_problem(), controlled_reach_problem(), two_phase_chain()]
