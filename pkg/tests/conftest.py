import numpy as np
import pytest

from stochkernel.model import ExistentialSet, LocationalSet

# acceptance lines collected during the run and echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def random_existential(rng, n, d=2, plo=0.05, phi=0.95, shape="normal"):
    if shape == "circle":
        X = rng.normal(size=(n, d))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
    elif shape == "box":
        X = rng.uniform(-1, 1, size=(n, d))
    else:
        X = rng.normal(size=(n, d))
    return ExistentialSet(X, rng.uniform(plo, phi, size=n))


def random_locational(rng, max_bits, d=2, full_mass=False):
    """Random locational set with at most ``max_bits`` realization bits."""
    pts, bits = [], 0
    while True:
        k = int(rng.integers(1, 4))
        b = int(np.ceil(np.log2(k + 1)))
        if bits + b > max_bits:
            break
        mass = 1.0 if full_mass else rng.uniform(0.3, 1.0)
        w = rng.dirichlet(np.ones(k)) * mass
        pts.append([(rng.normal(size=d), float(x)) for x in w])
        bits += b
    return LocationalSet.from_points(pts)


def ring(n, p, radius=1.0):
    th = 2 * np.pi * np.arange(n) / n
    return ExistentialSet(radius * np.c_[np.cos(th), np.sin(th)], np.full(n, p))


@pytest.fixture
def two_point():
    return ExistentialSet([[0.0, 0.0], [1.0, 0.0]], [0.5, 0.5])


@pytest.fixture
def record():
    def _record(number, name, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
