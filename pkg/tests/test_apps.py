import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochkernel import apps, oracle
from stochkernel.model import ExistentialSet, PreconditionError

from conftest import random_existential, random_locational


def enum_objective(s, c, kind="ball"):
    """E[max |v-c|] or E[max - min |v-c|] by full enumeration."""
    d = np.linalg.norm(s.coords - np.asarray(c, dtype=float), axis=1)
    m = d.size
    hi_pad, lo_pad = np.r_[d, -np.inf], np.r_[d, np.inf]
    total = 0.0
    for loc, pr in oracle.iter_realizations(s):
        li = np.where(loc < 0, m, loc)
        hi, lo = hi_pad[li].max(axis=1), lo_pad[li].min(axis=1)
        val = hi if kind == "ball" else hi - lo
        total += pr @ np.where(np.isfinite(hi), val, 0.0)
    return float(total)


def enum_sq_max(s, X):
    X = np.atleast_2d(X)
    D = np.sum((s.coords[:, None, :] - X[None]) ** 2, axis=2)
    m = D.shape[0]
    pad = np.vstack([D, np.full((1, X.shape[0]), -np.inf)])
    total = np.zeros(X.shape[0])
    for loc, pr in oracle.iter_realizations(s):
        hi = pad[np.where(loc < 0, m, loc)].max(axis=1)
        total += pr @ np.where(np.isfinite(hi), hi, 0.0)
    return total


PAIR = np.array([[1.0, 0.0], [-1.0, 0.0]])


def test_meb_deterministic_pair():
    r = apps.expected_meb(ExistentialSet(PAIR, [1.0, 1.0]), 0.2, 1.0)
    assert np.allclose(r.center, 0.0, atol=1e-4)
    assert r.value == pytest.approx(1.0, abs=1e-6)


def test_meb_pair_p08():
    s = ExistentialSet(PAIR, [0.8, 0.8])
    assert enum_objective(s, [0.0, 0.0]) == pytest.approx(0.96, abs=1e-12)
    r = apps.expected_meb(s, 0.2, 0.8)
    assert abs(r.center[0]) <= 1e-4
    assert r.value == pytest.approx(0.96, abs=1e-2)
    assert r.optimizer_gap is not None and r.optimizer_gap <= 1e-3


def test_meb_beta_violation():
    with pytest.raises(PreconditionError):
        apps.expected_meb(ExistentialSet(PAIR, [0.3, 0.9]), 0.2, 0.5)


def test_meb_dimension_check():
    with pytest.raises(PreconditionError):
        apps.expected_meb(ExistentialSet(np.zeros((2, 4)), [1.0, 1.0]), 0.2, 1.0)


def test_meb_convex_along_lines():
    rng = np.random.default_rng(0)
    s = random_existential(rng, 20, plo=0.5, phi=1.0)
    core = apps.distance_coreset(s, 0.25, 0.5, max_samples=400)
    tt = np.linspace(0, 1, 21)
    for _ in range(100):
        a, b = rng.normal(size=(2, 2)) * 2
        f = np.array([core.ball(a + t * (b - a)) for t in tt])
        # second differences of a convex function are nonnegative
        assert np.all(f[:-2] - 2 * f[1:-1] + f[2:] >= -1e-10)


@pytest.mark.parametrize("seed", range(4))
def test_meb_enumeration_at_center(seed):
    rng = np.random.default_rng(seed)
    s = random_existential(rng, 12, plo=0.5, phi=1.0)
    eps = 0.25
    r = apps.expected_meb(s, eps, 0.5, seed=seed)
    truth = enum_objective(s, r.center)
    assert truth <= (1 + eps) * r.value + 1e-6
    assert abs(r.value - truth) <= eps * truth


def test_shell_cocircular():
    th = np.linspace(0, 2 * np.pi, 9)[:-1]
    P = np.c_[np.cos(th), np.sin(th)] * 2 + [1.0, -1.0]
    r = apps.expected_shell(ExistentialSet(P, np.ones(8)), 0.2, 1.0)
    assert r.value <= 1e-6
    assert np.allclose(r.center, [1.0, -1.0], atol=1e-3)


def test_shell_bisector():
    r = apps.expected_shell(ExistentialSet(PAIR, [1.0, 1.0]), 0.2, 1.0)
    assert r.value <= 1e-8
    assert abs(r.center[0]) <= 1e-4
    assert r.optimizer_gap is None


def test_sq_meb_single_point():
    s = ExistentialSet([[2.0, -1.0]], [1.0])
    with pytest.warns(UserWarning, match="lower-dimensional"):
        core = apps.expected_sq_meb_coreset(s, 0.1)
    assert np.allclose(core.lifted, apps.lift([[2.0, -1.0]]))
    X = np.random.default_rng(1).normal(size=(50, 2))
    assert np.allclose(core.envelope(X), np.sum((X - [2.0, -1.0]) ** 2, axis=1), atol=1e-12)


def test_sq_meb_two_point(two_point):
    ref = enum_sq_max(two_point, [[0.0, 0.0]])[0]
    # (1,0) present with probability 1/2 gives 1, otherwise 0
    assert ref == pytest.approx(0.5, abs=1e-15)
    with pytest.warns(UserWarning, match="lower-dimensional"):
        core = apps.expected_sq_meb_coreset(two_point, 0.1)
    got = core.envelope([[0.0, 0.0]])[0]
    assert (1 - 0.1) * ref - 1e-12 <= got <= ref + 1e-12


@pytest.mark.parametrize("locational", [False, True])
def test_sq_meb_random_queries(locational):
    rng = np.random.default_rng(2)
    s = random_locational(rng, 12) if locational else random_existential(rng, 12)
    X = rng.normal(size=(1000, 2)) * 3
    ref = enum_sq_max(s, X)
    assert np.allclose(apps.expected_sq_distance_max(s, X), ref, rtol=1e-9, atol=1e-12)
    core = apps.expected_sq_meb_coreset(s, 0.1)
    got = core.envelope(X)
    assert np.all(got <= ref + 1e-9)
    assert np.all(got >= (1 - 0.1) * ref - 1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000))
def test_sq_meb_translation(seed):
    rng = np.random.default_rng(seed)
    s = random_existential(rng, 10)
    shift = rng.normal(size=2) * 5
    X = rng.normal(size=(20, 2))
    moved = ExistentialSet(s.coords + shift, s.probs)
    assert np.allclose(apps.expected_sq_distance_max(moved, X + shift),
                       apps.expected_sq_distance_max(s, X), rtol=1e-9, atol=1e-9)


def test_lift_identity():
    rng = np.random.default_rng(3)
    V, x = rng.normal(size=(10, 2)), rng.normal(size=2)
    Y = np.r_[x, 1.0]
    assert np.allclose(np.sum(x * x) + apps.lift(V) @ Y, np.sum((V - x) ** 2, axis=1))
