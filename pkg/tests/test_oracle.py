import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochkernel import geom, oracle
from stochkernel.model import ExistentialSet

from conftest import random_existential, random_locational


def negative_instance():
    X = np.zeros((10, 2))
    X[5:, 0] = 1.0
    return ExistentialSet(X, np.full(10, 0.1))


def test_negative_instance_value():
    value = oracle.enumerate_expected_width(negative_instance(), [1.0, 0.0])
    assert value == pytest.approx((1 - 0.9 ** 5) ** 2, abs=1e-12)
    assert value == pytest.approx(0.16769844, abs=1e-8)


def test_probabilities_sum_to_one():
    rng = np.random.default_rng(0)
    assert oracle.enumerate_probability_total(random_existential(rng, 15)) == pytest.approx(1.0, abs=1e-12)
    assert oracle.enumerate_probability_total(random_locational(rng, 16)) == pytest.approx(1.0, abs=1e-12)


def test_enumeration_cap():
    s = ExistentialSet(np.zeros((30, 2)), np.full(30, 0.5))
    with pytest.raises(oracle.EnumerationTooLarge):
        oracle.enumerate_expected_width(s, [1.0, 0.0])


def test_certain_points_cost_no_bits():
    s = ExistentialSet(np.random.default_rng(1).normal(size=(40, 2)), np.r_[np.ones(38), 0.5, 0.5])
    assert oracle.realization_count(s) == 4
    assert oracle.enumerate_probability_total(s) == pytest.approx(1.0, abs=1e-12)


def test_width_cdf_extremes():
    s = random_existential(np.random.default_rng(2), 10)
    u = [0.6, 0.8]
    assert oracle.enumerate_width_cdf(s, u, -1e-9) == 0.0
    assert oracle.enumerate_width_cdf(s, u, geom.width(s.coords, u)) == pytest.approx(1.0, abs=1e-12)


def test_mc_deterministic_zero_interval():
    s = ExistentialSet(np.random.default_rng(3).normal(size=(10, 2)), np.ones(10))
    mean, half = oracle.mc_estimate(s, [1.0, 0.0], n_samples=500)
    assert mean == pytest.approx(geom.width(s.coords, [1.0, 0.0]), abs=1e-12)
    assert half == 0.0


def test_mc_interval_contains_truth():
    s = random_existential(np.random.default_rng(4), 14)
    U = geom.unit(np.random.default_rng(5).normal(size=(20, 2)))
    mean, half = oracle.mc_estimate(s, U, n_samples=20_000, seed=1)
    truth = oracle.enumerate_expected_width(s, U)
    assert np.mean(np.abs(mean - truth) <= half) >= 0.9


def test_mc_seed_repeats():
    s = random_existential(np.random.default_rng(6), 20)
    assert oracle.mc_estimate(s, [1.0, 0.0], seed=9) == oracle.mc_estimate(s, [1.0, 0.0], seed=9)


def test_mc_interval_shrinks():
    s = random_existential(np.random.default_rng(7), 20)
    _, h1 = oracle.mc_estimate(s, [1.0, 0.0], n_samples=10_000, seed=2)
    _, h4 = oracle.mc_estimate(s, [1.0, 0.0], n_samples=40_000, seed=3)
    assert 0.5 * 0.7 <= h4 / h1 <= 0.5 * 1.3


def test_mc_t_r_statistic():
    s = ExistentialSet([[1.0, 0.0], [4.0, 0.0]], [0.5, 0.5])
    mean, half = oracle.mc_estimate(s, [1.0, 0.0], statistic=("t_r", 2), n_samples=50_000)
    assert abs(mean - 0.25) <= half


def test_band_reflexive_and_trivial():
    s = random_existential(np.random.default_rng(8), 10)
    U = geom.angle_direction(np.linspace(0, np.pi, 8))
    t = np.linspace(0.1, 3, 12)
    assert oracle.band_check(s, s, 0.0, 0.0, U, t).passed
    other = random_existential(np.random.default_rng(9), 10)
    assert oracle.band_check(s, other, 0.0, 1.0, U, t).passed


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000))
def test_band_monotone_in_tau(seed):
    rng = np.random.default_rng(seed)
    a, b = random_existential(rng, 8), random_existential(rng, 8)
    U = geom.unit(rng.normal(size=(4, 2)))
    t = np.linspace(0.1, 3, 8)
    fr = [oracle.band_check(a, b, 0.1, tau, U, t).pass_fraction for tau in (0.0, 0.1, 0.3, 1.0)]
    assert all(x <= y for x, y in zip(fr, fr[1:]))


def test_kolmogorov_distance_examples():
    assert oracle.kolmogorov_distance(([0.0, 1.0], [0.5, 0.5]), ([0.0, 1.0], [0.5, 0.5])) == 0.0
    assert oracle.kolmogorov_distance(([0.0], [1.0]), ([1.0], [1.0])) == 1.0
    assert oracle.kolmogorov_distance(([0.0, 1.0], [0.5, 0.5]), ([0.0, 1.0], [0.25, 0.75])) == pytest.approx(0.25)


def test_tukey_depth_examples():
    sq = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])
    w = np.ones(4)
    assert oracle.tukey_depth_brute(sq, w, [0.0, 0.0]) == 2.0
    assert oracle.tukey_depth_brute(sq, w, [0.5, 0.0]) == 1.0
    assert oracle.tukey_depth_brute(sq, w, [1.0, 1.0]) == 1.0
    assert oracle.tukey_depth_brute(sq, w, [2.0, 0.0]) == 0.0
    assert oracle.tukey_depth_brute(sq, np.array([3.0, 1.0, 1.0, 1.0]), [1.0, 1.0]) == 3.0


def test_tukey_depth_many_matches_single():
    rng = np.random.default_rng(10)
    P = rng.normal(size=(25, 2))
    w = rng.uniform(0.1, 1, 25)
    X = rng.normal(size=(30, 2))
    assert np.allclose(oracle.tukey_depth_many(P, w, X), [oracle.tukey_depth_brute(P, w, x) for x in X])
