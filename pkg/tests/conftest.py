import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from stochplan.sde import TrajectorySample  # noqa: E402


def make_traj(states, dt=0.1, t0=0.0, seed=0):
    states = np.asarray(states, float)
    if states.ndim == 1:
        states = states[:, None]
    m = np.zeros((states.shape[0] - 1, 1))
    return TrajectorySample(t0, states[0].copy(), dt, states, m, seed)


def random_walk(rng, n_steps, dim=2, scale=0.35, start=None):
    start = np.zeros(dim) if start is None else np.asarray(start, float)
    inc = rng.normal(scale=scale, size=(n_steps, dim))
    return np.vstack([start, start + np.cumsum(inc, axis=0)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance lines, echoed at the end of the session so they survive output capture
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
