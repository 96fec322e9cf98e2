import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochplan.geometry import (Ball, Empty, GridMaskRegion, ball, box, complement, difference, erode, half_space,
                                intersection, mollified_payoff, region_from_dict, region_to_dict, union)

from oracles import distance_to_complement_bruteforce

coords = st.floats(-3, 3, allow_nan=False)
points = st.lists(st.tuples(coords, coords), min_size=1, max_size=30).map(np.array)


def test_ball_membership():
    b = ball((0.0, 0.0), 1.0)
    assert b.contains((0.0, 0.0))
    assert not b.contains((2.0, 0.0))


def test_difference_excludes_goal():
    d = difference(box((-2, -2), (2, 2)), ball((0, 0), 0.5))
    assert not d.contains((0.1, 0.1))
    assert d.contains((1.5, 1.5))


def test_erode_ball_exact_and_empty():
    e = erode(ball((0.0, 0.0), 1.0), 0.25)
    assert isinstance(e, Ball) and e.radius == 0.75
    assert isinstance(erode(ball((0.0,), 1.0), 1.5), Empty)
    assert erode(ball((0.0,), 1.0), 1.5).contains((0.0,)) is False


def test_erode_box_matches_bruteforce():
    g = box((0.0, 0.0), (2.0, 1.0))
    eps = 0.3
    e = erode(g, eps)
    h = 0.02
    ax = np.arange(-0.5, 2.5 + h, h)
    probe = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
    rng = np.random.default_rng(0)
    for x in rng.uniform([-0.2, -0.2], [2.2, 1.2], size=(200, 2)):
        truth = g.contains(x) and distance_to_complement_bruteforce(g, x, probe) >= eps
        if truth != e.contains(x):
            # disagreement only allowed within one probe cell of the eroded boundary
            assert abs(e.signed_distance(x[None])[0]) <= h * np.sqrt(2)


def test_mollified_payoff_values():
    g = ball((0.0, 0.0), 1.0)
    eps = 0.2
    l = mollified_payoff(g, eps)
    assert l(np.array([[0.5, 0.0]]))[0] == 1.0
    assert np.isclose(l(np.array([[0.8 + eps / 2, 0.0]]))[0], 0.5)
    assert l(np.array([[1.5, 0.0]]))[0] == 0.0


def test_mollified_below_indicator():
    g = ball((0.3, -0.2), 0.9)
    l = mollified_payoff(g, 0.25)
    x = np.random.default_rng(1).uniform(-2, 2, size=(10_000, 2))
    assert np.all(l(x) <= g.contains(x).astype(float))


def test_mollified_empty_core_warns():
    with pytest.warns(UserWarning):
        l = mollified_payoff(ball((0.0,), 0.1), 0.5)
    assert l.empty
    assert np.all(l(np.array([[0.0], [0.05]])) == 0.0)


@settings(max_examples=60, deadline=None)
@given(points, points, st.floats(0.05, 1.0))
def test_mollified_payoff_lipschitz_and_range(xs, ys, eps):
    n = min(len(xs), len(ys))
    xs, ys = xs[:n], ys[:n]
    g = union(ball((0.0, 0.0), 1.2), box((0.5, 0.5), (2.0, 1.5)))
    l = mollified_payoff(ball((0.0, 0.0), 1.2), eps)
    a, b = l(xs), l(ys)
    assert np.all((a >= 0) & (a <= 1))
    assert np.all(np.abs(a - b) <= np.linalg.norm(xs - ys, axis=-1) / eps + 1e-12)
    lb = mollified_payoff(box((-1.0, -0.5), (1.0, 1.5)), eps)
    a, b = lb(xs), lb(ys)
    assert np.all(np.abs(a - b) <= np.linalg.norm(xs - ys, axis=-1) / eps + 1e-12)
    assert np.all(g.contains(xs) | ~g.contains(xs))


@settings(max_examples=60, deadline=None)
@given(points)
def test_complement_involution(xs):
    for r in (ball((0.2, 0.1), 1.0), box((-1, -1), (0.5, 2.0), closed=False), half_space((1.0, 1.0), 0.3),
              difference(box((-2, -2), (2, 2)), ball((0, 0), 1.0))):
        assert np.array_equal(complement(complement(r)).contains(xs), r.contains(xs))
        assert np.array_equal(complement(r).contains(xs), ~r.contains(xs))


@settings(max_examples=40, deadline=None)
@given(points, st.floats(0.01, 0.5), st.floats(0.01, 0.5))
def test_erosion_monotone_in_eps(xs, e1, e2):
    e1, e2 = min(e1, e2), max(e1, e2)
    for g in (ball((0.0, 0.0), 1.5), box((-1.0, -1.0), (1.0, 2.0))):
        inner, outer = erode(g, e2).contains(xs), erode(g, e1).contains(xs)
        assert np.all(~inner | outer)
        assert np.all(~outer | g.contains(xs))


def test_distance_zero_iff_closure():
    pts = np.random.default_rng(4).uniform(-2, 2, size=(2000, 2))
    for r in (ball((0, 0), 1.0), ball((0, 0), 1.0, closed=False), box((-1, -0.5), (1, 0.5)),
              half_space((0.0, 1.0), 0.2)):
        closed_version = r if r.closed else ball(r.center, r.radius, closed=True)
        assert np.array_equal(r.distance(pts) == 0.0, closed_version.contains(pts))


def test_intersection_and_union_compose():
    a, b = ball((0, 0), 1.0), box((0, -2), (2, 2))
    x = np.array([[0.5, 0.0], [-0.5, 0.0], [1.5, 0.0], [3.0, 0.0]])
    assert intersection(a, b).contains(x).tolist() == [True, False, False, False]
    assert union(a, b).contains(x).tolist() == [True, True, True, False]


def test_region_dict_roundtrip():
    r = union(difference(box((0, 0), (2, 2)), ball((1, 1), 0.5)), complement(half_space((1, 0), -1.0)))
    r2 = region_from_dict(region_to_dict(r))
    x = np.random.default_rng(2).uniform(-3, 3, size=(500, 2))
    assert np.array_equal(r.contains(x), r2.contains(x))


def test_grid_mask_region_lookup():
    mask = np.zeros((5, 5), dtype=bool)
    mask[2, 3] = True
    g = GridMaskRegion((0.0, 0.0), (1.0, 1.0), mask)
    assert g.contains((2.1, 2.9))
    assert not g.contains((0.0, 0.0))
    assert not g.contains((20.0, 3.0))
    assert g.distance(np.array([[2.0, 3.0]]))[0] == 0.0
