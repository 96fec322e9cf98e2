"""Random specs and trajectories shared by the motion tests and the acceptance suite."""

import numpy as np

from stochplan.geometry import ball, box, union
from stochplan.motion import MotionSpec, PathUntilT, Phase, ReachAtT

from conftest import make_traj, random_walk

DT = 0.1


def random_region(rng, scale=2.0):
    kind = rng.integers(3)
    c = rng.uniform(-scale, scale, 2)
    if kind == 0:
        return ball(c, rng.uniform(0.4, 1.6), closed=bool(rng.integers(2)))
    if kind == 1:
        w = rng.uniform(0.4, 1.8, 2)
        return box(c - w, c + w, closed=bool(rng.integers(2)))
    return union(ball(c, rng.uniform(0.3, 1.0)), ball(c + rng.normal(size=2), rng.uniform(0.3, 1.0)))


def random_way(rng):
    c = rng.uniform(-0.5, 0.5, 2)
    return box(c - rng.uniform(2.0, 4.0, 2), c + rng.uniform(2.0, 4.0, 2))


def random_path_spec(rng, n_steps):
    n = int(rng.integers(1, 4))
    phases = [Phase(random_way(rng), random_region(rng), PathUntilT()) for _ in range(n)]
    return MotionSpec(tuple(phases), n_steps * DT)


def random_reach_spec(rng, n_steps):
    n = int(rng.integers(1, 4))
    steps = np.sort(rng.choice(np.arange(1, n_steps + 1), size=n, replace=True))
    phases = [Phase(random_way(rng), random_region(rng), ReachAtT(float(s * DT))) for s in steps]
    return MotionSpec(tuple(phases), n_steps * DT), [int(s) for s in steps]


def random_traj(rng, n_steps):
    start = rng.uniform(-1.5, 1.5, 2)
    return make_traj(random_walk(rng, n_steps, start=start, scale=rng.uniform(0.1, 0.6)), dt=DT)


def random_sets(rng, n):
    return [union(random_region(rng, 1.0), random_way(rng)) if rng.random() < 0.3 else random_region(rng, 1.0)
            for _ in range(n)]
