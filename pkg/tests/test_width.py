import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochkernel import geom, oracle, width
from stochkernel.model import ExistentialSet, LocationalSet, StochkernelError

from conftest import random_existential, random_locational


def test_expected_support_examples(two_point):
    f, g = width.expected_support(two_point, [1.0, 0.0])
    assert f == pytest.approx(0.5, abs=1e-15)
    assert np.allclose(g, [0.5, 0.0], atol=1e-15)
    f, g = width.expected_support(two_point, [-1.0, 0.0])
    assert f == pytest.approx(-0.25, abs=1e-15)
    assert np.allclose(g, [0.25, 0.0], atol=1e-15)


def test_expected_support_singleton():
    f, g = width.expected_support(ExistentialSet([[3.0, 4.0]], [1.0]), [0.0, 1.0])
    assert f == 4.0
    assert np.array_equal(g, [3.0, 4.0])


def test_expected_width_examples(two_point):
    assert width.expected_width(two_point, [1.0, 0.0]) == pytest.approx(0.25, abs=1e-15)
    one = LocationalSet.from_points([[((0, 0), 0.5), ((1, 0), 0.5)]])
    for th in np.linspace(0, 2 * np.pi, 17):
        assert width.expected_width(one, geom.angle_direction(th)) == pytest.approx(0.0, abs=1e-15)
    sq = ExistentialSet([[0, 0], [1, 0], [1, 1], [0, 1]], np.ones(4))
    for th in np.linspace(0, 2 * np.pi, 17):
        u = geom.angle_direction(th)
        assert width.expected_width(sq, u) == pytest.approx(geom.width(sq.coords, u), abs=1e-15)


def test_prr_normalization_locational():
    s = random_locational(np.random.default_rng(0), 14)
    t = width.pr_table(s, geom.angle_direction(0.3))
    empty = np.prod(1 - np.bincount(s.owner, weights=s.probs))
    assert t.pr.sum() + empty == pytest.approx(1.0, abs=1e-12)


def test_extreme_vertex(two_point):
    assert np.allclose(width.extreme_vertex(two_point, [1.0, 0.0]), [0.5, 0.0], atol=1e-15)
    assert np.allclose(width.extreme_vertex(two_point, [-1.0, 0.0]), [0.25, 0.0], atol=1e-15)
    P = np.random.default_rng(1).normal(size=(20, 3))
    det = ExistentialSet(P, np.ones(20))
    u = geom.unit(np.array([1.0, 2.0, -0.5]))
    assert np.array_equal(width.extreme_vertex(det, u), P[geom.support(P, u)[1]])


def test_extreme_vertex_matches_finite_difference(two_point):
    # the gradient of the enumerated support function along the circle
    th, h = 0.4, 1e-6
    f = lambda a: oracle.enumerate_expected_support(two_point, geom.angle_direction(a))
    g = width.extreme_vertex(two_point, geom.angle_direction(th))
    tangent = np.array([-math.sin(th), math.cos(th)])
    assert (f(th + h) - f(th - h)) / (2 * h) == pytest.approx(g @ tangent, abs=1e-8)


def test_angular_two_point(two_point):
    st_ = width.build_angular(two_point)
    assert st_.breakpoints.size == 1
    assert st_.breakpoints[0] == pytest.approx(math.pi / 2, abs=1e-15)
    assert st_.query_width(0.0) == pytest.approx(0.25, abs=1e-15)


def test_angular_random_queries():
    rng = np.random.default_rng(2)
    s = random_existential(rng, 50)
    st_ = width.build_angular(s)
    th = rng.uniform(0, 2 * np.pi, 1000)
    ref = width.expected_widths(s, geom.angle_direction(th))
    assert np.allclose(st_.query_width(th), ref, rtol=1e-9, atol=1e-12)


def test_angular_locational_and_breakpoints():
    rng = np.random.default_rng(3)
    s = random_locational(rng, 20)
    st_ = width.build_angular(s)
    th = np.r_[rng.uniform(0, 2 * np.pi, 500), st_.breakpoints, st_.breakpoints + np.pi]
    U = geom.angle_direction(th)
    f, _ = width.expected_support_many(s, U)
    assert np.allclose(st_.query_support(th), f, rtol=1e-9, atol=1e-12)


def test_angular_deterministic():
    P = np.random.default_rng(4).normal(size=(15, 2))
    st_ = width.build_angular(ExistentialSet(P, np.ones(15)))
    th = np.linspace(0, 2 * np.pi, 200)
    assert np.allclose(st_.query_width(th), geom.widths(P, geom.angle_direction(th)), atol=1e-12)


def test_angular_rejects_3d():
    with pytest.raises(StochkernelError) as e:
        width.build_angular(ExistentialSet(np.zeros((2, 3)), [0.5, 0.5]))
    assert e.value.code == "width.unsupported_dimension"


def test_angular_with_duplicates_and_collinear():
    s = ExistentialSet([[0, 0], [0, 0], [1, 0], [2, 0], [1, 1], [1, 1]], [0.3, 0.6, 0.5, 0.2, 0.9, 0.4])
    st_ = width.build_angular(s)
    th = np.r_[np.linspace(0, 2 * np.pi, 361), st_.breakpoints]
    ref = oracle.enumerate_expected_width(s, geom.angle_direction(th))
    assert np.allclose(st_.query_width(th), ref, atol=1e-12)


def test_polytope_two_point(two_point):
    M = width.build_M(two_point)
    assert M.vertices.shape == (2, 2)
    assert sorted(map(tuple, np.round(M.vertices, 15))) == [(0.25, 0.0), (0.5, 0.0)]
    th = 2 * np.pi * np.arange(360) / 360
    U = geom.angle_direction(th)
    assert np.allclose(M.support(U), width.expected_support_many(two_point, U)[0], atol=1e-12)


def test_polytope_deterministic_is_hull():
    P = np.random.default_rng(5).normal(size=(30, 2))
    M = width.build_M(ExistentialSet(P, np.ones(30)))
    hull = P[geom.convex_hull_2d(P)]
    assert sorted(map(tuple, np.round(M.vertices, 12))) == sorted(map(tuple, np.round(hull, 12)))


def test_polytope_random_eight():
    rng = np.random.default_rng(6)
    s = random_existential(rng, 8)
    M = width.build_M(s)
    assert len(M.vertices) <= 2 * math.comb(8, 2)
    th = rng.uniform(0, 2 * np.pi, 10_000)
    U = geom.angle_direction(th)
    assert np.allclose(M.support(U), width.expected_support_many(s, U)[0], rtol=1e-9, atol=1e-12)
    # counterclockwise and convex
    V = M.vertices
    e1 = np.roll(V, -1, axis=0) - V
    e2 = np.roll(V, -2, axis=0) - np.roll(V, -1, axis=0)
    assert np.all(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] > 0)


def test_presorted_path_matches():
    rng = np.random.default_rng(7)
    s = random_existential(rng, 300)
    u = geom.angle_direction(1.1)
    proj = s.coords @ u
    order = geom.canonical_order(proj, geom.lex_rank(s.coords))
    assert width.expected_support_sorted(proj[order], s.probs[order]) == pytest.approx(
        width.expected_support(s, u)[0], abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 12), st.sampled_from([2, 3]))
def test_prr_normalization(seed, n, d):
    rng = np.random.default_rng(seed)
    s = random_existential(rng, n, d, 0.01, 1.0)
    t = width.pr_table(s, geom.unit(rng.normal(size=d)))
    assert np.all((t.pr >= 0) & (t.pr <= 1))
    assert t.pr.sum() + np.prod(1 - s.probs) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.booleans(), st.sampled_from([2, 3]))
def test_matches_enumeration(seed, locational, d):
    rng = np.random.default_rng(seed)
    s = random_locational(rng, 12, d) if locational else random_existential(rng, int(rng.integers(1, 13)), d)
    U = geom.unit(rng.normal(size=(5, d)))
    assert np.allclose(width.expected_widths(s, U), oracle.enumerate_expected_width(s, U), rtol=1e-9, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from([2.0, 0.5]))
def test_scaling(seed, factor):
    rng = np.random.default_rng(seed)
    s = random_existential(rng, 20)
    U = geom.unit(rng.normal(size=(8, 2)))
    scaled = ExistentialSet(factor * s.coords, s.probs)
    assert np.allclose(width.expected_widths(scaled, U), factor * width.expected_widths(s, U), rtol=1e-12)
