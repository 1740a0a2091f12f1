"""Kernels for the width distribution.

Four constructions are provided:

* ``quant_simple``: sample N realizations and keep a deterministic kernel of
  each one; the output is a uniform mixture of small point sets.
* ``quant_poisson``: replace every point by a Poisson number of copies and
  resample the copies from the normalized rate measure.  The output is a
  set of independent points.
* ``quant_tukey``: points deep inside the Tukey-depth region are almost
  always surrounded by present points, so the region's dilated kernel is
  kept as always-present anchors and only the light outside is sampled.
* ``quant_subset``: under the beta-assumption the subset exp-kernel already
  works.

Width CDFs of independent points are computed exactly in O(k log k): split
on the lowest present point along u, which needs the survival product of
everything below it and of everything beyond ``t`` above it.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from . import geom, oracle, width
from .expkernel import SubsetKernel, exp_kernel_subset
from .model import (ExistentialSet, LocationalSet, PreconditionError, StochkernelError,
                    require_valid, sample_choices, sample_counts)

SAMPLE_CONST = 4.0
POISSON_CAP = 1e12
EXACT_TUKEY_MAX = 4000
TUKEY3_MAX = 300
Z99 = 2.5758293035489004


# ---------------------------------------------------------------------------
# output forms

@dataclass
class WidthCdf:
    """Pr[width <= t]; rows are directions, columns are t values."""

    t: np.ndarray
    values: np.ndarray
    exact: bool
    halfwidth: np.ndarray | None = None


@dataclass
class MixtureKernel:
    """Uniform mixture of point sets, stored as distinct members with counts."""

    members: list
    counts: np.ndarray
    dimension: int
    method: str = "simple"
    params: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return int(np.sum(self.counts))

    def size(self) -> int:
        return int(sum(len(m) for m in self.members))

    def member_widths(self, U) -> np.ndarray:
        """Widths (n_members, k) of every member along the rows of U."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        out = np.zeros((len(self.members), U.shape[0]))
        sizes = np.array([len(m) for m in self.members])
        nz = np.flatnonzero(sizes)
        if nz.size == 0:
            return out
        pts = np.vstack([self.members[i] for i in nz])
        proj = pts @ U.T
        starts = np.r_[0, np.cumsum(sizes[nz])[:-1]]
        out[nz] = np.maximum.reduceat(proj, starts, axis=0) - np.minimum.reduceat(proj, starts, axis=0)
        return out

    def cdf(self, U, t) -> np.ndarray:
        w = self.member_widths(U)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        c = np.asarray(self.counts, dtype=float)
        return np.einsum("m,mkt->kt", c, w[:, :, None] <= t[None, None, :]) / c.sum()


@dataclass
class BernoulliKernel:
    """Independent points; the first ``n_anchors`` are always present."""

    coords: np.ndarray
    probs: np.ndarray
    n_anchors: int = 0
    method: str = "poisson"
    params: dict = field(default_factory=dict)
    sample_counts: np.ndarray | None = None

    def as_set(self) -> ExistentialSet:
        return ExistentialSet(self.coords, np.clip(self.probs, 0.0, 1.0))

    @property
    def dimension(self) -> int:
        return int(self.coords.shape[1])

    def __len__(self) -> int:
        return int(self.coords.shape[0])

    def cdf(self, U, t) -> np.ndarray:
        return independent_width_cdf(self.coords, self.probs, U, t)


def independent_width_cdf(coords, probs, U, t) -> np.ndarray:
    """Exact Pr[width <= t] for independent points, O(k log k) per direction.

    Pr = Pr[empty] + sum_i p_i * S_below(i) * S_beyond(x_i + t), where the
    points are sorted by projection and S are survival products.
    """
    X = np.asarray(coords, dtype=float)
    p = np.asarray(probs, dtype=float)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros((U.shape[0], t.size))
    if X.shape[0] == 0:
        out[:, t >= 0] = 1.0
        return out
    q = 1.0 - p
    for k in range(U.shape[0]):
        x = X @ U[k]
        o = np.argsort(x, kind="stable")
        xs, ps, qs = x[o], p[o], q[o]
        below = np.cumprod(np.r_[1.0, qs])           # below[i] = prod_{j<i}
        beyond = np.r_[np.cumprod(qs[::-1])[::-1], 1.0]  # beyond[j] = prod_{l>=j}
        r = np.searchsorted(xs, xs[:, None] + t[None, :], side="right")
        term = (ps * below[:-1])[:, None] * beyond[r]
        val = below[-1] + term.sum(axis=0)
        out[k] = np.where(t >= 0, np.clip(val, 0.0, 1.0), 0.0)
    return out


def monte_carlo_width_cdf(s, U, t, n_samples: int = 20000, seed=0) -> WidthCdf:
    """Empirical width CDF with 99% half-widths.

    The half-width is the larger side of the Wilson score interval, so it stays
    positive when the empirical value is 0 or 1.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    rng = np.random.default_rng(seed)
    proj = s.coords @ U.T
    hits = np.zeros((U.shape[0], t.size))
    left = n_samples
    while left > 0:
        b = min(left, 1 << 13)
        masks = sample_choices(s, b, rng)
        hi = np.where(masks[:, :, None], proj[None], -np.inf).max(axis=1)
        lo = np.where(masks[:, :, None], proj[None], np.inf).min(axis=1)
        w = np.where(np.isfinite(hi), hi - lo, 0.0)
        hits += (w[:, :, None] <= t[None, None, :]).sum(axis=0)
        left -= b
    f = hits / n_samples
    z2n = Z99 ** 2 / n_samples
    mid = (f + z2n / 2) / (1 + z2n)
    spread = Z99 * np.sqrt(f * (1 - f) / n_samples + z2n / (4 * n_samples)) / (1 + z2n)
    half = np.maximum(np.abs(mid + spread - f), np.abs(f - (mid - spread)))
    return WidthCdf(t, f, False, half)


def cdf(obj, U, t, method: str = "auto", n_samples: int = 20000, seed=0) -> WidthCdf:
    """Width CDF of a kernel or an uncertain set along the rows of U."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if isinstance(obj, MixtureKernel):
        return WidthCdf(t, obj.cdf(U, t), True)
    if isinstance(obj, SubsetKernel):
        obj = obj.kernel
    if isinstance(obj, BernoulliKernel):
        obj = obj.as_set()
    if method == "mc":
        return monte_carlo_width_cdf(obj, U, t, n_samples, seed)
    if isinstance(obj, ExistentialSet):
        return WidthCdf(t, independent_width_cdf(obj.coords, obj.probs, U, t), True)
    if obj.realization_bits() <= oracle.MAX_BITS:
        return WidthCdf(t, oracle.enumerate_width_cdf(obj, U, t).reshape(U.shape[0], t.size), True)
    return monte_carlo_width_cdf(obj, U, t, n_samples, seed)


# ---------------------------------------------------------------------------
# simple mixture

def _check_unit(name: str, x: float) -> None:
    if not (0.0 < x <= 0.5):
        raise PreconditionError(f"{name} must be in (0, 1/2]", f"quantkernel.{name}")


def simple_sample_size(eps: float, tau: float, d: int, const: float = SAMPLE_CONST) -> int:
    return int(math.ceil(const / (tau * tau * eps ** (d - 1)) * math.log(1.0 / eps)))


def _member(P: np.ndarray, eps: float) -> np.ndarray:
    if P.shape[0] == 0:
        return P.reshape(0, P.shape[1])
    return geom.eps_kernel(P, eps).points


def quant_simple(s, eps: float, tau: float, seed=0, const: float = SAMPLE_CONST) -> MixtureKernel:
    """Mixture of deterministic kernels of N sampled realizations.

    Each member keeps width >= width(realization) / (1 + eps), which is the
    form the upper side of the band needs.
    """
    require_valid(s)
    _check_unit("eps", eps)
    _check_unit("tau", tau)
    d = s.dimension
    N = simple_sample_size(eps, tau, d, const)
    rng = np.random.default_rng(seed)
    masks, counts = sample_counts(s, N, rng)
    members = [_member(s.coords[m], eps) for m in masks]
    return MixtureKernel(members, counts, d, "simple",
                         {"eps": eps, "tau": tau, "N": N, "seed": seed, "const": const})


# ---------------------------------------------------------------------------
# Poissonized sampling

def rates(s: ExistentialSet) -> np.ndarray:
    """Poisson rates -ln(1-p); infinite for p = 1."""
    with np.errstate(divide="ignore"):
        return -np.log1p(-np.asarray(s.probs, dtype=float))


def poisson_sample_size(lam: float, tau: float, delta: float, const: float = SAMPLE_CONST,
                        special_point: bool = False) -> tuple[float, int]:
    tau1 = tau / (4.0 * lam) if special_point else 0.5 * (tau / lam) ** 2
    return tau1, int(math.ceil(const / (tau1 * tau1) * math.log(1.0 / delta)))


def _resample(coords, lam_v, n_samples, rng):
    """Multinomial copy counts and the merged presence probability of each point."""
    lam = float(lam_v.sum())
    k = rng.multinomial(n_samples, lam_v / lam)
    keep = np.flatnonzero(k)
    probs = -np.expm1(-k[keep] * (lam / n_samples))
    return coords[keep], probs, k[keep]


def quant_poisson(s: ExistentialSet, tau: float, delta: float, seed=0,
                  const: float = SAMPLE_CONST, special_point: bool = False,
                  cap: float = POISSON_CAP) -> BernoulliKernel:
    """Independent samples of the normalized rate measure.

    N copies are drawn, each present with probability 1 - exp(-lambda/N).
    Copies of the same input point are merged: k copies are jointly present
    with probability 1 - exp(-k lambda/N), which leaves the width law
    unchanged.
    """
    require_valid(s)
    if not isinstance(s, ExistentialSet):
        raise PreconditionError("Poissonized sampling needs an existential set", "quantkernel.model")
    _check_unit("tau", tau)
    if not (0.0 < delta < 1.0):
        raise PreconditionError("delta must be in (0, 1)", "quantkernel.delta")
    if np.any(s.probs >= 1.0):
        raise PreconditionError("points with p = 1 have infinite rate; use the Tukey method",
                                "quantkernel.poisson_p1")
    lam_v = rates(s)
    lam = float(lam_v.sum())
    tau1, N = poisson_sample_size(lam, tau, delta, const, special_point)
    if N > cap:
        raise PreconditionError(
            f"sample size {N:.3g} exceeds cap {cap:.3g}; total rate {lam:.3g} is too large, "
            "use the Tukey method", "quantkernel.poisson_cap")
    rng = np.random.default_rng(seed)
    pts, probs, k = _resample(np.asarray(s.coords), lam_v, N, rng)
    return BernoulliKernel(pts.copy(), probs, 0, "poisson",
                           {"tau": tau, "delta": delta, "N": N, "tau1": tau1, "lambda": lam,
                            "seed": seed, "const": const, "special_point": special_point,
                            "sample_probability": -math.expm1(-lam / N)}, k)


# ---------------------------------------------------------------------------
# Tukey-depth regions

@numba.njit(cache=True)
def _depth_sweep(coords, weights, lexrank, order, ev_i, ev_j, gstart, gangle, gamma):
    """Vertex defining the depth-gamma constraint on every arc of directions."""
    m = order.size
    ng = gangle.size
    pos = np.empty(m, dtype=np.int64)
    W = np.empty(m)
    acc = 0.0
    for k in range(m):
        pos[order[k]] = k
        acc += weights[order[k]]
        W[k] = acc
    kk = 0
    while kk < m and W[kk] < gamma:
        kk += 1
    if kk == m:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    run_angle = np.empty(ng + 1)
    run_vertex = np.empty(ng + 1, dtype=np.int64)
    nr = 0
    run_angle[0] = 0.0
    run_vertex[0] = order[kk]
    nr = 1
    for g in range(ng):
        nxt = gangle[g + 1] if g + 1 < ng else 2.0 * math.pi
        mid = 0.5 * (gangle[g] + nxt)
        lo = m
        hi = -1
        for e in range(gstart[g], gstart[g + 1]):
            for loc in (ev_i[e], ev_j[e]):
                q = pos[loc]
                if q < lo:
                    lo = q
                if q > hi:
                    hi = q
        width._resort_block(order, lo, hi, coords, lexrank, mid)
        acc = W[lo - 1] if lo > 0 else 0.0
        for k in range(lo, hi + 1):
            pos[order[k]] = k
            acc += weights[order[k]]
            W[k] = acc
        if lo <= kk <= hi:
            kk = lo
            while W[kk] < gamma:
                kk += 1
        v = order[kk]
        if v != run_vertex[nr - 1]:
            run_angle[nr] = gangle[g]
            run_vertex[nr] = v
            nr += 1
    return run_angle[:nr], run_vertex[:nr]


@numba.njit(cache=True)
def _clip(poly, normals, offsets, tol):
    """Intersect a convex polygon with halfplanes n.x <= c (Sutherland-Hodgman)."""
    cap = poly.shape[0] + normals.shape[0] + 4
    a = np.empty((cap, 2))
    b = np.empty((cap, 2))
    n = poly.shape[0]
    a[:n] = poly
    for c in range(normals.shape[0]):
        if n == 0:
            break
        nx = normals[c, 0]
        ny = normals[c, 1]
        off = offsets[c]
        out = 0
        for i in range(n):
            j = i + 1 if i + 1 < n else 0
            da = nx * a[i, 0] + ny * a[i, 1] - off
            db = nx * a[j, 0] + ny * a[j, 1] - off
            ina = da <= tol
            inb = db <= tol
            if ina:
                b[out] = a[i]
                out += 1
            if ina != inb:
                s = da / (da - db)
                s = min(max(s, 0.0), 1.0)
                b[out, 0] = a[i, 0] + s * (a[j, 0] - a[i, 0])
                b[out, 1] = a[i, 1] + s * (a[j, 1] - a[i, 1])
                out += 1
        a, b = b, a
        n = out
    return a[:n].copy()


def _merge_duplicates(P: np.ndarray, w: np.ndarray):
    uniq, inv = np.unique(P, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    return uniq, np.bincount(inv, weights=np.where(np.isfinite(w), w, 0.0), minlength=uniq.shape[0]) + \
        np.where(np.bincount(inv, weights=~np.isfinite(w), minlength=uniq.shape[0]) > 0, np.inf, 0.0)


def _dedupe_cycle(V: np.ndarray, tol: float) -> np.ndarray:
    if V.shape[0] <= 1:
        return V
    keep = [0]
    for i in range(1, V.shape[0]):
        if np.max(np.abs(V[i] - V[keep[-1]])) > tol:
            keep.append(i)
    if len(keep) > 1 and np.max(np.abs(V[keep[-1]] - V[keep[0]])) <= tol:
        keep.pop()
    return V[keep]


def tukey_region_points(points, weights, threshold: float) -> np.ndarray:
    """Vertices (CCW) of {x : weighted Tukey depth >= threshold} in the plane.

    Along direction w the depth constraint is <w, x> <= <w, v(w)>, where
    v(w) is the first point in decreasing projection order whose prefix
    weight reaches the threshold.  v(w) only changes at pair-swap angles, and
    on an arc shorter than pi with a fixed v the constraint family is cut
    out by the arc's end directions.  Returns an empty (0, 2) array when the
    region is empty; a point or segment comes back as 1 or 2 vertices.
    """
    P = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    if P.shape[0] == 0:
        return np.zeros((0, 2))
    P, w = _merge_duplicates(P, w)
    lexrank = geom.lex_rank(P)
    ang, ii, jj = width._pair_events(P)
    if ang.size:
        gs = np.flatnonzero(np.r_[True, np.diff(ang) > width.ANGLE_MERGE_TOL])
        gangle = ang[gs]
        gstart = np.r_[gs, ang.size].astype(np.int64)
        if gangle[0] <= width.ANGLE_MERGE_TOL:
            # a group at angle zero is absorbed by the start order
            gangle, gstart = gangle[1:], gstart[1:]
    else:
        gangle = np.zeros(0)
        gstart = np.zeros(1, dtype=np.int64)
    first = gangle[0] if gangle.size else 2 * math.pi
    t0 = 0.5 * first
    order = geom.canonical_order(P @ np.array([math.cos(t0), math.sin(t0)]), lexrank).astype(np.int64)
    gamma = threshold * (1.0 - 1e-12)
    ra, rv = _depth_sweep(P, w, lexrank, order, ii.astype(np.int64), jj.astype(np.int64),
                          gstart, gangle, gamma)
    if ra.size == 0:
        return np.zeros((0, 2))
    ends = np.r_[ra[1:], 2 * math.pi]
    angles, verts = [], []
    for a0, a1, v in zip(ra, ends, rv):
        pieces = max(1, math.ceil((a1 - a0) / (math.pi / 4)))
        th = np.linspace(a0, a1, pieces + 1)
        angles.append(th)
        verts.append(np.full(th.size, v))
    th = np.concatenate(angles)
    vv = np.concatenate(verts)
    N = geom.angle_direction(th)
    off = np.einsum("ij,ij->i", N, P[vv])
    scale = max(1.0, float(np.max(np.abs(P))))
    lo, hi = P.min(axis=0) - scale, P.max(axis=0) + scale
    box = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    V = _clip(box, N, off, 1e-12 * scale)
    return _dedupe_cycle(V, 1e-9 * scale)


def tukey_region_points_3d(points, weights, threshold: float) -> np.ndarray:
    """Vertices of the depth region in R^3 from triple-normal constraints."""
    P = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    P, w = _merge_duplicates(P, w)
    n = P.shape[0]
    if n > TUKEY3_MAX:
        raise PreconditionError(f"exact 3-d depth region supports n <= {TUKEY3_MAX}",
                                "quantkernel.tukey_size")
    normals = [np.eye(3), -np.eye(3)]
    if n >= 3:
        i, j, k = (a.ravel() for a in np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij"))
        keep = (i < j) & (j < k)
        i, j, k = i[keep], j[keep], k[keep]
        C = np.cross(P[j] - P[i], P[k] - P[i])
        ln = np.linalg.norm(C, axis=1)
        ok = ln > 1e-12 * max(1.0, float(np.max(np.abs(P)))) ** 2
        C = C[ok] / ln[ok, None]
        normals += [C, -C]
    # pair normals let segments and flat regions close up as well
    if n >= 2:
        i, j = np.triu_indices(n, 1)
        D = geom.unit(P[j] - P[i])
        normals += [D, -D]
    Wd = np.vstack(normals)
    gamma = threshold * (1.0 - 1e-12)
    q = np.empty(Wd.shape[0])
    for s0 in range(0, Wd.shape[0], 20000):
        blk = Wd[s0:s0 + 20000]
        proj = blk @ P.T
        o = np.argsort(-proj, axis=1, kind="stable")
        cw = np.cumsum(w[o], axis=1)
        k = np.argmax(cw >= gamma, axis=1)
        if not np.all(cw[:, -1] >= gamma):
            return np.zeros((0, 3))
        rows = np.arange(blk.shape[0])
        q[s0:s0 + 20000] = proj[rows, o[rows, k]]
    return _halfspace_vertices(Wd, q, P)


def _halfspace_vertices(A: np.ndarray, b: np.ndarray, P: np.ndarray) -> np.ndarray:
    from scipy.optimize import linprog
    from scipy.spatial import HalfspaceIntersection

    d = A.shape[1]
    norm = np.linalg.norm(A, axis=1)
    res = linprog(np.r_[np.zeros(d), -1.0], A_ub=np.hstack([A, norm[:, None]]), b_ub=b,
                  bounds=[(None, None)] * d + [(0, None)], method="highs")
    if res.status != 0:
        return np.zeros((0, d))
    c, r = res.x[:d], res.x[d]
    scale = max(1.0, float(np.max(np.abs(P))))
    if r <= 1e-9 * scale:
        return c.reshape(1, d)
    hs = HalfspaceIntersection(np.hstack([A, -b[:, None]]), c)
    V = hs.intersections
    V = V[geom.hull_vertices(V)]
    return V


@dataclass
class TukeyRegion:
    """Depth region H, its kernel, and the dilated kernel region K."""

    vertices: np.ndarray
    threshold: float
    kernel_points: np.ndarray
    center: np.ndarray
    K_vertices: np.ndarray
    eps: float
    outside: np.ndarray
    outside_weight: float
    method: str = "exact"
    rounds: int = 0
    round_weights: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return int(self.center.shape[0])

    def contains(self, X, region: str = "H", tol: float = 1e-9) -> np.ndarray:
        V = self.vertices if region == "H" else self.K_vertices
        return in_hull(V, X, tol)

    def shrunk_K(self) -> np.ndarray:
        """Vertices of K scaled by 1/(1+eps) about the center."""
        return self.center + (self.K_vertices - self.center) / (1.0 + self.eps)


def in_hull(V: np.ndarray, X, tol: float = 1e-9) -> np.ndarray:
    """Membership in conv(V) with a tolerance relative to the coordinate scale."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.shape[0] == 0:
        return np.zeros(X.shape[0], dtype=bool)
    scale = max(1.0, float(np.max(np.abs(V))), float(np.max(np.abs(X))) if X.size else 1.0)
    eps = tol * scale
    c, B = geom.affine_basis(V)
    r = B.shape[1]
    D = X - c
    resid = D - (D @ B) @ B.T if r else D
    off = np.linalg.norm(resid, axis=1) <= eps
    if r == 0:
        return off
    Y = D @ B
    Vs = (V - c) @ B
    if r == 1:
        return off & (Y[:, 0] >= Vs[:, 0].min() - eps) & (Y[:, 0] <= Vs[:, 0].max() + eps)
    A, b = geom.hull_facets(Vs)
    return off & np.all(Y @ A.T <= b + eps, axis=1)


def _dilate(E: np.ndarray, center: np.ndarray, factor: float) -> np.ndarray:
    return center + factor * (E - center)


def _kernel_region(H: np.ndarray, eps: float, center: np.ndarray | None = None):
    """Kernel of the region's vertices and its (1+eps) dilation covering H."""
    e = eps
    for _ in range(30):
        E = geom.eps_kernel(H, e).points if H.shape[0] > 2 else H.copy()
        c = E.mean(axis=0) if center is None else center
        K = _dilate(E, c, 1.0 + eps)
        if np.all(in_hull(K, H, 1e-9)):
            return E, c, K
        e *= 0.5
    c = H.mean(axis=0) if center is None else center
    return H.copy(), c, _dilate(H, c, 1.0 + eps)


def depth_threshold(tau: float) -> float:
    return math.log(2.0 / tau)


def _region_vertices(P, w, gamma):
    d = P.shape[1]
    if d == 2:
        return tukey_region_points(P, w, gamma)
    if d == 3:
        return tukey_region_points_3d(P, w, gamma)
    raise StochkernelError("depth regions need d in {2, 3}", "quantkernel.unsupported_dimension")


def _check_helly(lam: float, d: int, tau: float) -> float:
    gamma = depth_threshold(tau)
    if not lam > (d + 1) * gamma:
        raise PreconditionError(
            f"total rate {lam:.6g} must exceed the Helly threshold (d+1)*ln(2/tau) = "
            f"{(d + 1) * gamma:.6g}; use the Poisson method", "quantkernel.helly")
    return gamma


def _finish_region(s, lam_v, H, gamma, eps, method, **kw) -> TukeyRegion:
    E, c, K = _kernel_region(H, eps)
    out = ~in_hull(K, s.coords, 1e-9)
    return TukeyRegion(H, gamma, E, c, K, eps, np.flatnonzero(out),
                       float(lam_v[out].sum()), method, **kw)


def tukey_region(s: ExistentialSet, tau: float, eps: float) -> TukeyRegion:
    """Exact depth region H (depth >= ln(2/tau)), its kernel and dilation K."""
    require_valid(s)
    if not isinstance(s, ExistentialSet):
        raise PreconditionError("depth regions need an existential set", "quantkernel.model")
    d = s.dimension
    lam_v = rates(s)
    gamma = _check_helly(float(lam_v.sum()), d, tau)
    if d == 2 and s.n_points > EXACT_TUKEY_MAX:
        raise PreconditionError(f"exact depth region supports n <= {EXACT_TUKEY_MAX}; use tukey-fast",
                                "quantkernel.tukey_size")
    H = _region_vertices(np.asarray(s.coords), lam_v, gamma)
    if H.shape[0] == 0:
        raise StochkernelError("depth region is empty", "quantkernel.empty_region")
    return _finish_region(s, lam_v, H, gamma, eps, "exact")


# ---------------------------------------------------------------------------
# iterative depth region (d = 2)

@dataclass
class FastTukeyParams:
    approx_const: float = 0.1      # eps2 = approx_const * sqrt(eps / ln n)
    sample_const: float = 2.0      # L = sample_const * ln n / eps2^2
    sample_cap: int = 1500


def _fast_attempt(P, lam_v, gamma, eps, rng, prm: FastTukeyParams):
    n = P.shape[0]
    ln_n = math.log(max(n, 3))
    lam = float(lam_v.sum())
    eps2 = prm.approx_const * math.sqrt(eps / ln_n)
    z_max = math.ceil(math.log2(max(2.0, 3 * eps2 * lam / gamma))) + 1
    eps1 = math.log1p(eps) / (z_max + 1)
    L0 = math.ceil(prm.sample_const * ln_n / eps2 ** 2)

    heavy = lam_v >= gamma
    center = None
    K = E = H = np.zeros((0, 2))
    if np.any(heavy):
        H = P[heavy][geom.convex_hull_2d(P[heavy])]
        E, center, K = _kernel_region(H, eps1)
    remaining = np.flatnonzero(~in_hull(K, P, 1e-9)) if K.shape[0] else np.arange(n)
    weights = [float(lam_v[remaining].sum())]
    rounds = 0
    while 3 * eps2 * weights[-1] > gamma:
        rounds += 1
        if rounds > z_max:
            return None, "round limit"
        li = weights[-1]
        if remaining.size <= min(L0, prm.sample_cap):
            S, ws = P[remaining], lam_v[remaining]
        else:
            L = min(L0, prm.sample_cap)
            pick = rng.choice(remaining, size=L, p=lam_v[remaining] / li)
            S, ws = P[pick], np.full(L, li / L)
        if K.shape[0]:
            S = np.vstack([S, K])
            ws = np.r_[ws, np.full(K.shape[0], np.inf)]
        Hi = tukey_region_points(S, ws, 4 * eps2 * li)
        if Hi.shape[0] == 0:
            return None, "empty region"
        if center is None:
            center = Hi.mean(axis=0)
        H = Hi
        E, _, K = _kernel_region(H, eps1, center)
        remaining = remaining[~in_hull(K, P[remaining], 1e-9)]
        weights.append(float(lam_v[remaining].sum()))
        if weights[-1] > 0.5 * li:
            return None, f"weight did not halve in round {rounds}"
    if center is None:
        return None, "no round ran"
    H_final = _dilate(H, center, (1.0 + eps1) ** (-rounds))
    info = dict(eps1=eps1, eps2=eps2, z_max=z_max, sample_size=min(L0, prm.sample_cap),
                rounds=rounds, weights=weights)
    return (H_final, E, K, center, remaining, info), ""


def tukey_region_fast(s: ExistentialSet, tau: float, eps: float, seed=0,
                      params: FastTukeyParams | None = None, certify: bool = True) -> TukeyRegion:
    """Iterative sampled depth region in the plane.

    Every round samples the points still outside the current region, takes
    the depth region of the sample plus the current region's vertices (with
    infinite weight), dilates its kernel slightly and deletes everything
    inside.  Failures (empty region, no halving, depth certificate) escalate
    the sampling accuracy twice and then fall back to the exact region.
    """
    require_valid(s)
    if not isinstance(s, ExistentialSet):
        raise PreconditionError("depth regions need an existential set", "quantkernel.model")
    if s.dimension != 2:
        raise StochkernelError("the iterative depth region needs d = 2", "quantkernel.unsupported_dimension")
    lam_v = rates(s)
    gamma = _check_helly(float(lam_v.sum()), 2, tau)
    P = np.asarray(s.coords, dtype=float)
    prm = params or FastTukeyParams()
    rng = np.random.default_rng(seed)
    reasons = []
    for attempt in range(3):
        res, why = _fast_attempt(P, lam_v, gamma, eps, rng, prm)
        if res is not None:
            H, E, K, center, remaining, info = res
            region = TukeyRegion(H, gamma, E, center, K, eps, remaining,
                                 float(lam_v[remaining].sum()), "fast", info["rounds"],
                                 info["weights"], dict(info, attempts=attempt + 1))
            if not certify:
                return region
            depth = oracle.tukey_depth_many(P, lam_v, region.shrunk_K())
            region.meta["min_vertex_depth"] = float(depth.min())
            if depth.min() >= gamma - 1e-9:
                return region
            why = f"depth certificate failed ({depth.min():.4g} < {gamma:.4g})"
        reasons.append(why)
        prm = FastTukeyParams(prm.approx_const * 0.5, prm.sample_const * 2.0, prm.sample_cap * 2)
    warnings.warn("iterative depth region failed (" + "; ".join(reasons) + "); using the exact region",
                  stacklevel=2)
    region = tukey_region(s, tau, eps)
    region.meta["fallback"] = reasons
    return region


# ---------------------------------------------------------------------------
# Algorithm with depth-region anchors

def quant_tukey(s: ExistentialSet, eps: float, tau: float, delta: float, seed=0,
                const: float = SAMPLE_CONST, fast: bool = False,
                region: TukeyRegion | None = None) -> BernoulliKernel:
    """Anchors at the vertices of K plus Poissonized samples of the outside.

    Outside points with p = 1 are always present and are kept as anchors
    instead of being sampled.
    """
    require_valid(s)
    _check_unit("eps", eps)
    _check_unit("tau", tau)
    if region is None:
        region = tukey_region_fast(s, tau, eps, seed) if fast else tukey_region(s, tau, eps)
    lam_v = rates(s)
    out = region.outside
    sure = out[~np.isfinite(lam_v[out])]
    out = out[np.isfinite(lam_v[out])]
    anchors = np.vstack([region.K_vertices, s.coords[sure]])
    lam_out = float(lam_v[out].sum())
    params = {"eps": eps, "tau": tau, "delta": delta, "seed": seed, "const": const,
              "region": region.method, "center": region.center.tolist(),
              "outside_weight": lam_out, "threshold": region.threshold}
    gamma = region.threshold
    params["outside_constant"] = lam_out * math.sqrt(eps) / math.log(1.0 / tau)
    if lam_out == 0.0:
        params.update(N=0, tau1=None)
        return BernoulliKernel(anchors, np.ones(anchors.shape[0]), anchors.shape[0], "tukey", params,
                               np.zeros(0, dtype=int))
    tau1, N = poisson_sample_size(lam_out, tau, delta, const, special_point=True)
    if N > POISSON_CAP:
        raise PreconditionError(f"outside sample size {N:.3g} exceeds cap", "quantkernel.poisson_cap")
    rng = np.random.default_rng(seed)
    pts, probs, k = _resample(np.asarray(s.coords)[out], lam_v[out], N, rng)
    params.update(N=N, tau1=tau1, depth_threshold=gamma)
    return BernoulliKernel(np.vstack([anchors, pts]), np.r_[np.ones(anchors.shape[0]), probs],
                           anchors.shape[0], "tukey", params, k)


def quant_subset(s: ExistentialSet, eps: float, tau: float, beta: float) -> SubsetKernel:
    """Subset quant-kernel: the subset exp-kernel at min(eps, tau)."""
    return exp_kernel_subset(s, min(eps, tau), beta)


def choose_method(s, tau: float) -> str:
    """Poisson when the total rate is at most (d+1) ln(2/tau), else the depth region."""
    if not isinstance(s, ExistentialSet):
        return "simple"
    lam = float(rates(s).sum())
    d = s.dimension
    if lam <= (d + 1) * depth_threshold(tau):
        return "poisson"
    if d == 2:
        return "tukey-fast" if s.n_points > EXACT_TUKEY_MAX else "tukey"
    if d == 3 and s.n_points <= TUKEY3_MAX:
        return "tukey"
    return "simple"


def build(s, method: str, eps: float, tau: float, delta: float = 0.01, seed=0,
          beta: float | None = None, const: float = SAMPLE_CONST):
    """Dispatch on a method name; ``auto`` picks by total rate."""
    if method == "auto":
        method = choose_method(s, tau)
    if method == "simple":
        return quant_simple(s, eps, tau, seed, const)
    if method == "poisson":
        return quant_poisson(s, tau, delta, seed, const)
    if method == "tukey":
        return quant_tukey(s, eps, tau, delta, seed, const)
    if method == "tukey-fast":
        return quant_tukey(s, eps, tau, delta, seed, const, fast=True)
    if method == "subset":
        if beta is None:
            raise PreconditionError("subset method needs beta", "quantkernel.beta")
        return quant_subset(s, eps, tau, beta)
    raise StochkernelError(f"unknown method {method!r}", "quantkernel.method")
