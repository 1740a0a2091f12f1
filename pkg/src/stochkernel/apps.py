"""Shape fitting on coresets: expected enclosing ball and spherical shell.

Every point v is lifted to psi(v) = (-2v, |v|^2) so that

    |x - v|^2 = |x|^2 + <psi(v), (x, 1)>,

which turns distance maxima into support functions of lifted points.  The
ball and shell objectives use a mixture of lifted-space kernels of sampled
realizations (an fpow kernel with r = 2, so each member is a subset of the
original points).  The centers are found by local search on the coreset
objective; a cutting-plane lower bound reports how far the ball optimum
can still be.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import expkernel, fpowkernel, geom, width
from .model import ExistentialSet, LocationalSet, PreconditionError, require_beta, require_valid, sample_counts

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
RESTARTS = 16
OBJ_TOL = 1e-8


def lift(X) -> np.ndarray:
    """psi(v) = (-2v, |v|^2)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.hstack([-2.0 * X, np.sum(X * X, axis=1, keepdims=True)])


def lifted_set(s):
    L = lift(s.coords)
    if isinstance(s, LocationalSet):
        return LocationalSet(L, s.probs, s.owner, s.n_points)
    return ExistentialSet(L, s.probs)


# ---------------------------------------------------------------------------
# mixture coreset of original-point subsets

@dataclass
class DistanceCoreset:
    """Members are subsets of the original points, weighted by their counts."""

    members: list
    counts: np.ndarray
    epsilon: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        keep = [i for i, m in enumerate(self.members) if len(m)]
        self._flat = np.vstack([self.members[i] for i in keep]) if keep else np.zeros((0, 1))
        lens = np.array([len(self.members[i]) for i in keep], dtype=np.int64)
        self._starts = np.r_[0, np.cumsum(lens)[:-1]] if keep else np.zeros(0, dtype=np.int64)
        self._w = np.asarray(self.counts, dtype=float)[keep] / float(np.sum(self.counts))
        self._seg = np.repeat(np.arange(len(keep)), lens)

    def size(self) -> int:
        return int(sum(len(m) for m in self.members))

    def _dists(self, c) -> np.ndarray:
        return np.linalg.norm(self._flat - np.asarray(c, dtype=float), axis=1)

    def ball(self, c) -> float:
        """(1/N) sum_i max_{v in P_i} |v - c|."""
        if self._w.size == 0:
            return 0.0
        return float(self._w @ np.maximum.reduceat(self._dists(c), self._starts))

    def shell(self, c) -> float:
        """(1/N) sum_i (max - min) of |v - c| over P_i."""
        if self._w.size == 0:
            return 0.0
        dist = self._dists(c)
        return float(self._w @ (np.maximum.reduceat(dist, self._starts) - np.minimum.reduceat(dist, self._starts)))

    def ball_subgradient(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        if self._w.size == 0:
            return np.zeros_like(c)
        dist = self._dists(c)
        top = np.maximum.reduceat(dist, self._starts)
        # first index attaining each segment maximum
        hit = np.flatnonzero(dist == top[self._seg])
        seg = self._seg[hit]
        first = hit[np.r_[True, seg[1:] != seg[:-1]]]
        diff = c - self._flat[first]
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(top[:, None] > 0, diff / top[:, None], 0.0)
        return self._w @ g

    def all_points(self) -> np.ndarray:
        pts = [m for m in self.members if len(m)]
        return np.unique(np.vstack(pts), axis=0) if pts else np.zeros((0, 0))


def distance_coreset(s: ExistentialSet, eps: float, beta: float, seed=0,
                     max_samples: int | None = None, const: float = fpowkernel.SAMPLE_CONST) -> DistanceCoreset:
    """Mixture of lifted-space kernels of sampled realizations (r = 2).

    The sample size uses the lifted dimension d + 1.
    """
    require_valid(s)
    require_beta(s, beta)
    if not (0.0 < eps <= 0.5):
        raise PreconditionError("eps must be in (0, 1/2]", "apps.eps")
    d = s.dimension
    k = d + 1
    eps0 = fpowkernel.inner_eps(eps, 2)
    N = fpowkernel.sample_size(eps, 2, k, const)
    capped = max_samples is not None and N > max_samples
    if capped:
        N = int(max_samples)
    rng = np.random.default_rng(seed)
    masks, counts = sample_counts(s, N, rng)
    L = lift(s.coords)
    members = []
    for m in masks:
        idx = np.flatnonzero(m)
        if idx.size == 0:
            members.append(np.zeros((0, d)))
            continue
        K = geom.eps_kernel(L[idx], eps0)
        members.append(s.coords[idx[K.source_indices]])
    params = {"eps": eps, "beta": beta, "eps0": eps0, "N": N, "seed": seed, "capped": capped}
    return DistanceCoreset(members, counts, eps, params)


# ---------------------------------------------------------------------------
# minimization

def golden_section(f, a: float, b: float, tol: float = 1e-10, max_iter: int = 200):
    """Minimum of a unimodal function on [a, b]."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def local_search(f, x0, span: float, rng, tol: float = OBJ_TOL, max_sweeps: int = 200):
    """Coordinate descent with golden-section line searches.

    Each sweep also tries a few random directions, which keeps the search
    from stalling on kinks that are not axis-aligned.
    """
    x = np.array(x0, dtype=float)
    d = x.size
    fx = f(x)
    for _ in range(max_sweeps):
        prev = fx
        dirs = np.vstack([np.eye(d), geom.unit(rng.normal(size=(d, d)))])
        for e in dirs:
            t, ft = golden_section(lambda a: f(x + a * e), -span, span)
            if ft < fx:
                x = x + t * e
                fx = ft
        if prev - fx <= tol * max(1.0, abs(fx)):
            break
    return x, fx


def cutting_plane_bound(f, grad, points: list, lo, hi, iters: int = 60) -> tuple[float, np.ndarray, float]:
    """Kelley lower bound of a convex f over the box [lo, hi].

    Returns (lower_bound, best_point, best_value).
    """
    from scipy.optimize import linprog

    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = lo.size
    cuts_A, cuts_b = [], []
    best_x, best_f = None, np.inf

    def add(x):
        nonlocal best_x, best_f
        fx = f(x)
        g = grad(x)
        if fx < best_f:
            best_x, best_f = x.copy(), fx
        # f(x) + g.(y - x) <= t  ->  g.y - t <= g.x - f(x)
        cuts_A.append(np.r_[g, -1.0])
        cuts_b.append(float(g @ x - fx))

    for p in points:
        add(np.clip(np.asarray(p, dtype=float), lo, hi))
    lb = -np.inf
    for _ in range(iters):
        res = linprog(np.r_[np.zeros(d), 1.0], A_ub=np.array(cuts_A), b_ub=np.array(cuts_b),
                      bounds=[(a, b) for a, b in zip(lo, hi)] + [(None, None)], method="highs")
        if res.status != 0:
            break
        lb = float(res.fun)
        if best_f - lb <= OBJ_TOL * max(1.0, abs(best_f)):
            break
        add(res.x[:d])
    return lb, best_x, best_f


def _starts(core: DistanceCoreset, rng, count: int) -> list:
    pts = [m for m in core.members if len(m)]
    allp = np.vstack(pts)
    starts = [allp.mean(axis=0)]
    for _ in range(count):
        m = pts[rng.integers(len(pts))]
        starts.append(m.mean(axis=0))
    return starts


@dataclass
class FitResult:
    center: np.ndarray
    value: float
    coreset_size: int
    optimizer_gap: float | None
    coreset: DistanceCoreset | None = None


def _check_dim(s) -> None:
    if s.dimension not in (2, 3):
        raise PreconditionError("shape fitting supports d in {2, 3}", "apps.dimension")


def expected_meb(s: ExistentialSet, eps: float, beta: float, seed=0,
                 max_samples: int | None = None) -> FitResult:
    """Center minimizing the coreset estimate of E[max |v - c|]."""
    _check_dim(s)
    core = distance_coreset(s, eps, beta, seed, max_samples)
    rng = np.random.default_rng(seed)
    P = np.asarray(s.coords, dtype=float)
    lo, hi = P.min(axis=0), P.max(axis=0)
    span = float(np.max(hi - lo)) or 1.0
    best_x, best_f = None, np.inf
    for x0 in _starts(core, rng, RESTARTS):
        x, fx = local_search(core.ball, x0, span, rng)
        if fx < best_f:
            best_x, best_f = x, fx
    # the optimum of a mixture of enclosing-ball radii lies in the hull of the points
    lb, kx, kf = cutting_plane_bound(core.ball, core.ball_subgradient, [best_x], lo, hi)
    if kf < best_f:
        best_x, best_f = kx, kf
    gap = max(0.0, best_f - lb) if np.isfinite(lb) else None
    return FitResult(best_x, float(best_f), core.size(), gap, core)


def expected_shell(s: ExistentialSet, eps: float, beta: float, seed=0,
                   max_samples: int | None = None) -> FitResult:
    """Best found center for the coreset estimate of E[max - min |v - c|].

    The objective is not convex; the result is the best of the restarts and
    no optimality gap is reported.
    """
    _check_dim(s)
    core = distance_coreset(s, eps, beta, seed, max_samples)
    rng = np.random.default_rng(seed)
    P = np.asarray(s.coords, dtype=float)
    span = float(np.max(P.max(axis=0) - P.min(axis=0))) or 1.0
    best_x, best_f = None, np.inf
    starts = _starts(core, rng, RESTARTS)
    starts += [P[i] for i in rng.choice(P.shape[0], size=min(4, P.shape[0]), replace=False)]
    for x0 in starts:
        x, fx = local_search(core.shell, x0, 2 * span, rng)
        if fx < best_f:
            best_x, best_f = x, fx
    return FitResult(best_x, float(best_f), core.size(), None, core)


# ---------------------------------------------------------------------------
# expected squared radius

@dataclass
class SqMebCoreset:
    """Upper envelope (1 - Pr[empty]) |x|^2 + max_s <s, (x, 1)>."""

    lifted: np.ndarray
    nonempty: float
    epsilon: float

    def envelope(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.hstack([X, np.ones((X.shape[0], 1))])
        return self.nonempty * np.sum(X * X, axis=1) + np.max(Y @ self.lifted.T, axis=1)

    def __len__(self) -> int:
        return int(self.lifted.shape[0])


def expected_sq_distance_max(s, X) -> np.ndarray:
    """E[max_v |x - v|^2] through the expected support of the lifted set."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.hstack([X, np.ones((X.shape[0], 1))])
    nrm = np.linalg.norm(Y, axis=1)
    f, _ = width.expected_support_many(lifted_set(s), Y / nrm[:, None])
    return (1.0 - s.empty_probability()) * np.sum(X * X, axis=1) + nrm * f


def expected_sq_meb_coreset(s, eps: float) -> SqMebCoreset:
    """Deterministic lifted points whose envelope is within (1-eps) of
    E[max |x - v|^2] everywhere.

    The lifted kernel loses at most eps times the lifted expected width,
    which is at most the expected maximum because every lifted value
    |x - v|^2 is nonnegative.
    """
    require_valid(s)
    K = expkernel.exp_kernel(lifted_set(s), eps)
    return SqMebCoreset(K.points, 1.0 - s.empty_probability(), eps)
