import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochplan.config import ConfigError, build_problem, resolve
from stochplan.grid import Grid, ValueField
from stochplan.io import fmt, pgm_bytes, read_field_csv, read_pgm, sha256, write_csv, write_field_csv, write_pgm


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_seventeen_digits_round_trip(v):
    assert float(fmt(v)) == v


def test_fmt_specials():
    assert (fmt(np.inf), fmt(-np.inf), fmt(np.nan), fmt(True), fmt(np.int64(7))) == ("inf", "-inf", "nan", "1", "7")


def test_atomic_write_leaves_no_temporaries(tmp_path):
    p = tmp_path / "sub" / "a.csv"
    write_csv(str(p), ["a", "b"], [(1, 0.1), (2, 1 / 3)])
    assert os.listdir(tmp_path / "sub") == ["a.csv"]
    assert p.read_text().splitlines() == ["a,b", "1,0.10000000000000001", "2,0.33333333333333331"]


def test_pgm_header_and_orientation(tmp_path):
    vals = np.zeros((3, 2))
    vals[2, 1] = 1.0  # largest x, largest y: top-right pixel
    data = pgm_bytes(vals, comment="demo\nsecond line")
    assert data.startswith(b"P5\n# demo\n# second line\n3 2\n255\n")
    p = tmp_path / "h.pgm"
    write_pgm(str(p), vals)
    img = read_pgm(str(p))
    assert img.shape == (2, 3) and img[0, 2] == 255 and img.sum() == 255


def test_field_csv_round_trip(tmp_path):
    g = Grid((0.0, -1.0), (1.0, 1.0), (4, 5))
    f = ValueField(g, 0.5, np.random.default_rng(0).uniform(size=g.shape))
    p = str(tmp_path / "f.csv")
    write_field_csv(p, f)
    back = read_field_csv(p)
    assert back.grid.nodes == g.nodes and np.allclose(back.grid.lo, g.lo) and np.allclose(back.grid.hi, g.hi)
    assert np.array_equal(back.values, f.values)
    assert len(sha256(p)) == 64


def test_config_errors_are_specific():
    base = {"model": {"name": "brownian"}, "spec": {"horizon": 1.0, "phases": [
        {"way": {"box": {"lo": [0], "hi": [1]}}, "goal": {"ball": {"center": [0.5], "radius": 0.1}}}]},
        "grid": {"lo": [0], "hi": [1], "nodes": [11]}}
    cfg = resolve(base)
    assert cfg["spec"]["phases"][0]["deadline"] == {"type": "path"}
    prob, _ = build_problem(cfg)
    assert prob.grid.nodes == (11,)
    bad = dict(base, grid={"lo": [0], "hi": [1], "nodes": [11, 11]})
    with pytest.raises(ConfigError):
        resolve(bad)
    bad = dict(base, spec={"preset": "bio_switch"})
    with pytest.raises(ConfigError, match="preset"):
        resolve(bad)
    bad = dict(base, grid={"lo": [0], "hi": [1], "nodes": [2]})
    with pytest.raises(ConfigError, match="grid/nodes/0"):
        resolve(bad)
