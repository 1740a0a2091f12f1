"""Expected support and width of uncertain point sets.

For a direction u sort all locations by decreasing projection (ties by the
global lexicographic rule).  A location is the top of the realization when
it is chosen and nothing above it is; its owner cannot be elsewhere above
it, so with ``C`` = owner mass already passed

    Pr_top(loc) = p_loc / (1 - C_loc) * prod_{above} (1 - C' - p') / (1 - C')

where the product telescopes per owner.  The existential model is the case
of one location per owner, where this reduces to p_v * prod (1 - p_above).
The expected support is the Pr_top-weighted projection sum and its gradient
(the extreme vertex of the expectation polytope M) is the weighted location
sum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from . import geom
from .model import ExistentialSet, LocationalSet, StochkernelError

FULL_RECOMPUTE_EVERY = 4096
ANGLE_MERGE_TOL = 1e-12
TWO_PI = 2.0 * math.pi


def _is_existential(s) -> bool:
    return isinstance(s, ExistentialSet)


# ---------------------------------------------------------------------------
# per-direction engine

def _grouped_exclusive_cumsum(owner: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Sum of vals over earlier entries with the same owner."""
    idx = np.argsort(owner, kind="stable")
    v = vals[idx]
    c = np.cumsum(v) - v
    o = owner[idx]
    start = np.flatnonzero(np.r_[True, o[1:] != o[:-1]])
    first = np.repeat(c[start], np.diff(np.r_[start, o.size]))
    out = np.empty_like(vals)
    out[idx] = c - first
    return out


def top_probabilities_sorted(p: np.ndarray, owner: np.ndarray | None = None) -> np.ndarray:
    """Pr_top for locations already in canonical order; O(m) when existential."""
    p = np.asarray(p, dtype=float)
    if owner is None:
        z = np.cumprod(np.r_[1.0, 1.0 - p[:-1]]) if p.size else p
        return p * z
    above = _grouped_exclusive_cumsum(np.asarray(owner), p)
    before = np.maximum(1.0 - above, p)
    factor = np.clip(before - p, 0.0, None) / before
    z = np.cumprod(np.r_[1.0, factor[:-1]]) if p.size else p
    return p * z / before


@dataclass
class PrRTable:
    """Locations along u (canonical order) with their Pr_top."""

    order: np.ndarray
    pr: np.ndarray
    empty_probability: float

    def total(self) -> float:
        return float(self.pr.sum())


def pr_table(s, u) -> PrRTable:
    u = np.asarray(u, dtype=float)
    proj = s.coords @ u
    order = geom.canonical_order(proj, geom.lex_rank(s.coords))
    owner = None if _is_existential(s) else s.owner[order]
    pr = top_probabilities_sorted(s.probs[order], owner)
    return PrRTable(order, pr, s.empty_probability())


def expected_support(s, u) -> tuple[float, np.ndarray]:
    """Expected support value along u and its gradient (extreme vertex of M)."""
    t = pr_table(s, u)
    pts = s.coords[t.order]
    f = float(t.pr @ (pts @ np.asarray(u, dtype=float)))
    return f, t.pr @ pts


def expected_support_sorted(proj_sorted, p_sorted) -> float:
    """Existential expected support from projections already in canonical order."""
    return float(top_probabilities_sorted(p_sorted) @ np.asarray(proj_sorted, dtype=float))


def expected_support_many(s, U) -> tuple[np.ndarray, np.ndarray]:
    """Expected supports (k,) and gradients (k, d) for the unit rows of U."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    k = U.shape[0]
    if s.n_locations == 0:
        return np.zeros(k), np.zeros((k, s.dimension))
    rank = geom.lex_rank(s.coords)
    proj = s.coords @ U.T
    if _is_existential(s):
        order = np.lexsort((np.broadcast_to(rank[:, None], proj.shape), -proj), axis=0)
        q = 1.0 - s.probs[order]
        z = np.cumprod(np.vstack([np.ones((1, k)), q[:-1]]), axis=0)
        pr = s.probs[order] * z
        f = np.einsum("ij,ij->j", pr, np.take_along_axis(proj, order, axis=0))
        grad = np.einsum("ij,ijk->jk", pr, s.coords[order])
        return f, grad
    f = np.empty(k)
    grad = np.empty((k, s.dimension))
    for j in range(k):
        order = geom.canonical_order(proj[:, j], rank)
        pr = top_probabilities_sorted(s.probs[order], s.owner[order])
        f[j] = pr @ proj[order, j]
        grad[j] = pr @ s.coords[order]
    return f, grad


def expected_width(s, u) -> float:
    u = np.asarray(u, dtype=float)
    return expected_support(s, u)[0] + expected_support(s, -u)[0]


def expected_widths(s, U) -> np.ndarray:
    U = np.atleast_2d(np.asarray(U, dtype=float))
    f, _ = expected_support_many(s, np.vstack([U, -U]))
    k = U.shape[0]
    return f[:k] + f[k:]


def extreme_vertex(s, u) -> np.ndarray:
    """Vertex of M extreme along u."""
    return expected_support(s, u)[1]


def extreme_vertices(s, U) -> np.ndarray:
    return expected_support_many(s, U)[1]


def probe(s):
    """Extreme-point oracle of M for kernel construction."""
    return lambda W: extreme_vertices(s, W)


# ---------------------------------------------------------------------------
# angular sweep (d = 2)

@numba.njit(cache=True)
def _recompute(order, coords, probs, owner, npts, cabove, zf, pos):
    acc = np.zeros(npts)
    z = 1.0
    a = 0.0
    b = 0.0
    for k in range(order.size):
        loc = order[k]
        pos[loc] = k
        o = owner[loc]
        c = acc[o]
        cabove[loc] = c
        p = probs[loc]
        before = max(1.0 - c, p)
        zf[k] = z
        pr = p * z / before
        a += pr * coords[loc, 0]
        b += pr * coords[loc, 1]
        acc[o] = c + p
        z = z * max(before - p, 0.0) / before
    zf[order.size] = z
    return a, b


@numba.njit(cache=True)
def _resort_block(order, lo, hi, coords, lexrank, theta):
    cs = math.cos(theta)
    sn = math.sin(theta)
    n = hi - lo + 1
    if n == 2:
        i, j = order[lo], order[lo + 1]
        pi = coords[i, 0] * cs + coords[i, 1] * sn
        pj = coords[j, 0] * cs + coords[j, 1] * sn
        if pj > pi or (pj == pi and lexrank[j] < lexrank[i]):
            order[lo] = j
            order[lo + 1] = i
        return
    blk = order[lo:hi + 1].copy()
    r = np.empty(n, dtype=np.int64)
    for k in range(n):
        r[k] = lexrank[blk[k]]
    blk = blk[np.argsort(r)]
    key = np.empty(n)
    for k in range(n):
        key[k] = -(coords[blk[k], 0] * cs + coords[blk[k], 1] * sn)
    blk = blk[np.argsort(key, kind="mergesort")]
    order[lo:hi + 1] = blk


@numba.njit(cache=True)
def _block_update(order, lo, hi, coords, probs, owner, lexrank, cabove, zf, pos,
                  ownacc, theta, a, b):
    for k in range(lo, hi + 1):
        loc = order[k]
        p = probs[loc]
        pr = p * zf[k] / max(1.0 - cabove[loc], p)
        a -= pr * coords[loc, 0]
        b -= pr * coords[loc, 1]
        ownacc[owner[loc]] = 1e300
    for k in range(lo, hi + 1):
        loc = order[k]
        o = owner[loc]
        if cabove[loc] < ownacc[o]:
            ownacc[o] = cabove[loc]
    _resort_block(order, lo, hi, coords, lexrank, theta)
    z = zf[lo]
    for k in range(lo, hi + 1):
        loc = order[k]
        pos[loc] = k
        o = owner[loc]
        c = ownacc[o]
        cabove[loc] = c
        ownacc[o] = c + probs[loc]
        p = probs[loc]
        before = max(1.0 - c, p)
        zf[k] = z
        pr = p * z / before
        a += pr * coords[loc, 0]
        b += pr * coords[loc, 1]
        z = z * max(before - p, 0.0) / before
    return a, b


@numba.njit(cache=True)
def _sweep(coords, probs, owner, npts, lexrank, order, ev_i, ev_j, gstart, gangle, every):
    m = order.size
    ng = gangle.size
    cabove = np.empty(m)
    zf = np.empty(m + 1)
    pos = np.empty(m, dtype=np.int64)
    ownacc = np.zeros(npts)
    A = np.empty(ng + 1)
    B = np.empty(ng + 1)
    a, b = _recompute(order, coords, probs, owner, npts, cabove, zf, pos)
    A[0] = a
    B[0] = b
    for g in range(ng):
        nxt = gangle[g + 1] if g + 1 < ng else 2.0 * math.pi
        mid = 0.5 * (gangle[g] + nxt)
        e0 = gstart[g]
        e1 = gstart[g + 1]
        lo = m
        hi = -1
        for e in range(e0, e1):
            for loc in (ev_i[e], ev_j[e]):
                q = pos[loc]
                if q < lo:
                    lo = q
                if q > hi:
                    hi = q
        if (g + 1) % every == 0:
            _resort_block(order, lo, hi, coords, lexrank, mid)
            a, b = _recompute(order, coords, probs, owner, npts, cabove, zf, pos)
        else:
            a, b = _block_update(order, lo, hi, coords, probs, owner, lexrank, cabove,
                                 zf, pos, ownacc, mid, a, b)
        A[g + 1] = a
        B[g + 1] = b
    return A, B


def _pair_events(coords: np.ndarray):
    m = coords.shape[0]
    i, j = np.triu_indices(m, 1)
    diff = coords[j] - coords[i]
    ok = (diff[:, 0] != 0) | (diff[:, 1] != 0)
    i, j, diff = i[ok], j[ok], diff[ok]
    base = np.arctan2(diff[:, 1], diff[:, 0])
    ang = np.concatenate([np.mod(base + 0.5 * math.pi, TWO_PI), np.mod(base - 0.5 * math.pi, TWO_PI)])
    ii = np.concatenate([i, i])
    jj = np.concatenate([j, j])
    srt = np.argsort(ang)
    return ang[srt], ii[srt], jj[srt]


@dataclass
class AngularStructure:
    """Piecewise expected support over the full circle of directions.

    ``starts[k]`` opens interval k, on which f(theta) = a[k] cos + b[k] sin
    and the gradient is (a[k], b[k]).  The structure is built as one forward
    track over [0, 2*pi); the support along -u is the same track at
    theta + pi.
    """

    starts: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @property
    def breakpoints(self) -> np.ndarray:
        """Distinct breakpoint angles folded into [0, pi)."""
        t = np.sort(np.mod(self.starts[1:], math.pi))
        if t.size == 0:
            return t
        keep = np.r_[True, np.diff(t) > 1e-9]
        t = t[keep]
        if t.size > 1 and t[-1] > math.pi - 1e-9 and t[0] < 1e-9:
            t = t[:-1]
        return t

    def _interval(self, theta):
        th = np.mod(np.asarray(theta, dtype=float), TWO_PI)
        return th, np.searchsorted(self.starts, th, side="right") - 1

    def query_support(self, theta):
        th, k = self._interval(theta)
        return self.a[k] * np.cos(th) + self.b[k] * np.sin(th)

    def query_gradient(self, theta):
        _, k = self._interval(theta)
        return np.stack([self.a[k], self.b[k]], axis=-1)

    def query_width(self, theta):
        th = np.asarray(theta, dtype=float)
        return self.query_support(th) + self.query_support(th + math.pi)

    def gradient_cycle(self) -> np.ndarray:
        return np.stack([self.a, self.b], axis=1)


def build_angular(s) -> AngularStructure:
    """Sweep all pair-swap angles once, updating only the swapped block."""
    if s.dimension != 2:
        raise StochkernelError("angular structure needs d = 2", "width.unsupported_dimension")
    coords = np.ascontiguousarray(s.coords, dtype=float)
    probs = np.ascontiguousarray(s.probs, dtype=float)
    owner = np.ascontiguousarray(s.owner, dtype=np.int64)
    lexrank = geom.lex_rank(coords)
    ang, ii, jj = _pair_events(coords)
    # events at 0 and 2*pi are absorbed by the starting order
    inner = (ang > ANGLE_MERGE_TOL) & (ang < TWO_PI - ANGLE_MERGE_TOL)
    ang, ii, jj = ang[inner], ii[inner], jj[inner]
    if ang.size:
        gs = np.flatnonzero(np.r_[True, np.diff(ang) > ANGLE_MERGE_TOL])
        gangle = ang[gs]
        gstart = np.r_[gs, ang.size].astype(np.int64)
    else:
        gangle = np.zeros(0)
        gstart = np.zeros(1, dtype=np.int64)
    first = gangle[0] if gangle.size else TWO_PI
    t0 = 0.5 * first
    order = geom.canonical_order(coords @ np.array([math.cos(t0), math.sin(t0)]), lexrank)
    order = np.ascontiguousarray(order, dtype=np.int64)
    A, B = _sweep(coords, probs, owner, max(s.n_points, 1), lexrank, order,
                  ii.astype(np.int64), jj.astype(np.int64), gstart, gangle,
                  FULL_RECOMPUTE_EVERY)
    starts = np.r_[0.0, gangle]
    return AngularStructure(starts, A, B)


@dataclass
class ExpectationPolytope:
    vertices: np.ndarray
    n_cones: int

    def support(self, u):
        """Support value along u, or an array of them for rows of U."""
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            return float(np.max(self.vertices @ u))
        return np.max(u @ self.vertices.T, axis=1)


def build_M(s, structure: AngularStructure | None = None) -> ExpectationPolytope:
    """Vertices of the expectation polytope (d = 2), counterclockwise."""
    st = build_angular(s) if structure is None else structure
    G = st.gradient_cycle()
    scale = max(float(np.max(np.abs(G))), 1e-300)
    keep = np.r_[True, np.any(np.abs(np.diff(G, axis=0)) > 1e-12 * scale, axis=1)]
    G = G[keep]
    # the cycle is already convex; a zero tolerance only drops exact collinear points
    h = geom.convex_hull_2d(G, rel_tol=0.0)
    return ExpectationPolytope(G[h], int(st.starts.size))
