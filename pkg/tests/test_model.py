import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochkernel.model import (ExistentialSet, LocationalSet, PreconditionError, ValidationError, dumps,
                               from_dict, lambda_of, loads, require_beta, sample_choices,
                               sample_counts, sample_realization, to_dict, validate)


def test_validate_two_points():
    rep = validate(ExistentialSet([[0, 0], [1, 0]], [0.5, 0.5]))
    assert rep.valid
    assert rep.beta == 0.5


def test_validate_zero_probability():
    rep = validate({"model": "existential", "dimension": 2, "points": [{"coords": [0, 0], "p": 0}]})
    assert not rep.valid
    assert any("probability must be in (0,1]" in v for v in rep.violations)


def test_validate_mixed_dimensions():
    raw = {"model": "existential", "points": [{"coords": [0, 0], "p": 0.5}, {"coords": [0, 0, 1], "p": 0.5}]}
    rep = validate(raw)
    assert not rep.valid
    assert any("dimension mismatch" in v for v in rep.violations)


def test_validate_lists_every_violation():
    raw = {"model": "existential", "points": [{"coords": [0, 0], "p": 0}, {"coords": [1, 0], "p": 2.0}]}
    assert len(validate(raw).violations) == 2


def test_locational_mass_above_one_rejected():
    s = LocationalSet.from_points([[((0, 0), 0.7), ((1, 0), 0.4)]])
    assert not validate(s).valid


def test_locational_shared_location_rejected():
    s = LocationalSet.from_points([[((0, 0), 0.5)], [((0, 0), 0.5)]])
    rep = validate(s)
    assert not rep.valid
    assert any("shared" in v for v in rep.violations)


def test_existential_duplicates_allowed():
    assert validate(ExistentialSet([[0, 0], [0, 0]], [0.1, 0.1])).valid


def test_parser_rejects_nan():
    with pytest.raises(ValidationError):
        loads('{"model": "existential", "points": [{"coords": [NaN, 0], "p": 0.5}]}')


def test_sample_all_present_when_p_one():
    s = ExistentialSet(np.arange(10.0).reshape(5, 2), np.ones(5))
    for seed in range(5):
        assert len(sample_realization(s, seed)) == 5


def test_inclusion_frequency_half():
    s = ExistentialSet(np.arange(20.0).reshape(10, 2), np.full(10, 0.5))
    m = sample_choices(s, 100_000, np.random.default_rng(0))
    assert np.all(np.abs(m.mean(axis=0) - 0.5) <= 0.01)


def test_locational_full_mass_exactly_one_location():
    s = LocationalSet.from_points([[((0, 0), 0.5), ((1, 0), 0.5)]])
    m = sample_choices(s, 10_000, np.random.default_rng(1))
    assert np.all(m.sum(axis=1) == 1)


def test_sampling_is_seeded():
    s = ExistentialSet(np.random.default_rng(0).normal(size=(30, 2)), np.full(30, 0.3))
    a, b = sample_realization(s, 7), sample_realization(s, 7)
    assert np.array_equal(a.indices, b.indices)


def test_inclusion_within_five_sigma():
    rng = np.random.default_rng(3)
    p = rng.uniform(0.05, 0.95, 8)
    s = ExistentialSet(rng.normal(size=(8, 2)), p)
    n = 100_000
    freq = sample_choices(s, n, rng).mean(axis=0)
    assert np.all(np.abs(freq - p) <= 5 * np.sqrt(p * (1 - p) / n))


def test_sample_counts_total():
    s = ExistentialSet([[0, 0], [1, 0], [0, 1]], [0.5, 0.5, 0.5])
    masks, counts = sample_counts(s, 5000, np.random.default_rng(0))
    assert counts.sum() == 5000
    assert len(masks) <= 8


def test_lambda_values():
    assert lambda_of(ExistentialSet([[0, 0]], [1 - math.exp(-1)])).total == pytest.approx(1.0, abs=1e-15)
    assert lambda_of(ExistentialSet([[0, 0], [1, 1]], [0.5, 0.5])).total == pytest.approx(2 * math.log(2), abs=1e-15)
    with pytest.raises(PreconditionError, match="Poissonization undefined at p=1"):
        lambda_of(ExistentialSet([[0, 0]], [1.0]))


def test_beta_gate():
    s = ExistentialSet([[0, 0], [1, 0]], [0.4, 0.9])
    require_beta(s, 0.4)
    with pytest.raises(PreconditionError):
        require_beta(s, 0.5)


finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)
prob = st.floats(min_value=1e-6, max_value=1.0, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(finite, finite, prob), min_size=1, max_size=12))
def test_roundtrip_existential(rows):
    s = ExistentialSet([r[:2] for r in rows], [r[2] for r in rows])
    back = from_dict(json.loads(dumps(to_dict(s))))
    assert np.array_equal(back.coords, s.coords)
    assert np.array_equal(back.probs, s.probs)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_roundtrip_locational(seed):
    rng = np.random.default_rng(seed)
    pts = []
    for _ in range(int(rng.integers(1, 5))):
        k = int(rng.integers(1, 4))
        w = rng.dirichlet(np.ones(k)) * rng.uniform(0.2, 1.0)
        pts.append([(rng.normal(size=3), float(x)) for x in w])
    s = LocationalSet.from_points(pts)
    back = from_dict(json.loads(dumps(to_dict(s))))
    assert np.array_equal(back.coords, s.coords)
    assert np.array_equal(back.probs, s.probs)
    assert np.array_equal(back.owner, s.owner)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_realizations_use_input_locations(seed):
    rng = np.random.default_rng(seed)
    s = ExistentialSet(rng.normal(size=(6, 2)), rng.uniform(0.1, 1, 6))
    r = sample_realization(s, seed)
    assert np.array_equal(r.points, s.coords[r.indices])
