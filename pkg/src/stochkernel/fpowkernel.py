"""Kernels for the expected root-extent T_r over the polar cone.

For u in the polar cone every projection <u, v> is nonnegative and

    T_r(P, u) = max <u,v>^(1/r) - min <u,v>^(1/r).

The kernel is a uniform mixture of deterministic eps0-kernels of sampled
realizations, with eps0 small enough that the r-th root does not blow the
per-realization error up.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import geom
from .model import ExistentialSet, PreconditionError, StochkernelError, require_beta, require_valid, sample_counts

POLAR_TOL = 1e-12
SAMPLE_CONST = 4.0


def polar_contains(s, u) -> bool:
    """True when <u, s> >= 0 (up to 1e-12) for every location."""
    X = s.coords if hasattr(s, "coords") else np.asarray(s, dtype=float)
    if X.shape[0] == 0:
        return True
    return bool(np.all(X @ np.asarray(u, dtype=float) >= -POLAR_TOL))


def _roots(proj: np.ndarray, r: int) -> np.ndarray:
    if np.any(proj < -POLAR_TOL):
        raise StochkernelError("direction outside polar cone", "fpowkernel.polar")
    return np.maximum(proj, 0.0) ** (1.0 / r)


def t_r(P, u, r: int) -> float:
    """max <u,v>^(1/r) - min <u,v>^(1/r); zero for the empty set."""
    P = np.asarray(P, dtype=float)
    if P.shape[0] == 0:
        return 0.0
    x = _roots(P @ np.asarray(u, dtype=float), r)
    return float(x.max() - x.min())


def inner_eps(eps: float, r: int) -> float:
    """Per-realization kernel accuracy: (eps / 4(r-1))^r, or eps/4 at r = 1."""
    if r == 1:
        return eps / 4.0
    return (eps / (4.0 * (r - 1))) ** r


def sample_size(eps: float, r: int, d: int, const: float = SAMPLE_CONST) -> int:
    expo = (r * d - r + 4) / 2.0
    return int(math.ceil(const / eps ** expo * math.log(1.0 / eps)))


@dataclass
class FpowKernel:
    """Uniform mixture of point sets for T_r queries."""

    members: list
    counts: np.ndarray
    r: int
    epsilon: float
    params: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return int(np.sum(self.counts))

    def size(self) -> int:
        return int(sum(len(m) for m in self.members))

    def expected(self, U) -> np.ndarray:
        """Exact mixture mean of T_r along the rows of U."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        tot = np.zeros(U.shape[0])
        for pts, c in zip(self.members, self.counts):
            if len(pts) == 0:
                continue
            x = _roots(pts @ U.T, self.r)
            tot += c * (x.max(axis=0) - x.min(axis=0))
        return tot / float(np.sum(self.counts))


def fpow_kernel(s: ExistentialSet, eps: float, r: int, beta: float, seed=0,
                const: float = SAMPLE_CONST, max_samples: int | None = None) -> FpowKernel:
    """Mixture of eps0-kernels of N sampled realizations.

    ``max_samples`` caps N for interactive use; the cap is recorded in the
    parameters so reports can flag it.
    """
    require_valid(s)
    if not (0.0 < eps <= 0.5):
        raise PreconditionError("eps must be in (0, 1/2]", "fpowkernel.eps")
    if int(r) != r or r < 1:
        raise PreconditionError("r must be a positive integer", "fpowkernel.r")
    r = int(r)
    require_beta(s, beta)
    d = s.dimension
    eps0 = inner_eps(eps, r)
    N = sample_size(eps, r, d, const)
    capped = max_samples is not None and N > max_samples
    if capped:
        N = int(max_samples)
    rng = np.random.default_rng(seed)
    masks, counts = sample_counts(s, N, rng)
    members = []
    for m in masks:
        P = s.coords[m]
        members.append(P if P.shape[0] == 0 else geom.eps_kernel(P, eps0).points)
    empty = polar_cone_empty(s)
    if empty:
        warnings.warn("polar cone is empty; the kernel has no valid query direction", stacklevel=2)
    params = {"eps": eps, "r": r, "beta": beta, "eps0": eps0, "N": N, "seed": seed,
              "const": const, "capped": capped, "polar_cone_empty": empty}
    return FpowKernel(members, counts, r, eps, params)


def polar_cone_empty(s) -> bool:
    """True when no nonzero u has <u, v> >= 0 for all locations.

    The cone is nonempty iff the origin is not in the interior of the
    locations' conic hull, which is an LP feasibility question.
    """
    from scipy.optimize import linprog

    X = np.asarray(s.coords, dtype=float)
    d = X.shape[1]
    if X.shape[0] == 0:
        return False
    # maximize t subject to <u, v> >= 0, |u_i| <= 1, and sum of sign-split u >= t
    best = 0.0
    for k in range(d):
        for sign in (1.0, -1.0):
            c = np.zeros(d)
            c[k] = -sign
            res = linprog(c, A_ub=-X, b_ub=np.zeros(X.shape[0]), bounds=[(-1, 1)] * d, method="highs")
            if res.status == 0:
                best = max(best, -res.fun)
    return best <= 1e-12


def polar_directions(s, count: int, seed=0) -> np.ndarray:
    """Random unit directions inside the polar cone (rejection sampling plus
    cone-interior mixing)."""
    from scipy.optimize import linprog

    X = np.asarray(s.coords, dtype=float)
    d = X.shape[1]
    rng = np.random.default_rng(seed)
    # a strictly interior direction: maximize the minimum normalized projection
    norms = np.maximum(np.linalg.norm(X, axis=1), 1e-300)
    res = linprog(np.r_[np.zeros(d), -1.0], A_ub=np.hstack([-X / norms[:, None], np.ones((X.shape[0], 1))]),
                  b_ub=np.zeros(X.shape[0]), bounds=[(-1, 1)] * d + [(None, 1)], method="highs")
    if res.status != 0 or res.x[d] <= POLAR_TOL or np.linalg.norm(res.x[:d]) == 0:
        raise StochkernelError("polar cone is empty", "fpowkernel.polar_empty")
    center = geom.unit(res.x[:d])
    out = []
    tries = 0
    while len(out) < count and tries < 1000:
        V = geom.unit(rng.normal(size=(4 * count, d)))
        lam = rng.uniform(0, 1, size=(4 * count, 1))
        W = geom.unit(lam * V + (1 - lam) * center)
        ok = np.all(W @ X.T >= 0.0, axis=1)
        out.extend(W[ok])
        tries += 1
    if not out:
        return center.reshape(1, d)
    return np.array(out[:count])
