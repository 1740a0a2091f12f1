"""Deterministic geometry: support and width, hulls, direction nets, fat
transforms and epsilon-kernels.

The kernel construction works from an extreme-point oracle only, so the same
code serves explicit point sets and bodies that are only known through
their support function (see ``expkernel``).  Probes start on a direction
net inside a fat frame and are refined where needed; the stopping rule is a
sandwich certificate: the polytope cut out by the probed supporting
halfspaces must lie inside ``(1 + eps)`` times the hull of the probe hits,
scaled about an interior point.  That inclusion bounds every directional
width ratio at once, not just the ones that happen to be tested.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ValidationError

ORIENT_TOL = 1e-12
KERNEL_SIZE_CONST = 16.0


# ---------------------------------------------------------------------------
# support and width

def lex_rank(P: np.ndarray) -> np.ndarray:
    """Rank of every point in lexicographic-then-index order."""
    P = np.asarray(P, dtype=float)
    order = np.lexsort(tuple(P[:, k] for k in range(P.shape[1] - 1, -1, -1)))
    rank = np.empty(P.shape[0], dtype=np.int64)
    rank[order] = np.arange(P.shape[0])
    return rank


def canonical_order(proj: np.ndarray, rank: np.ndarray) -> np.ndarray:
    """Indices by decreasing projection; ties go to the lower rank."""
    return np.lexsort((rank, -proj))


def support(P, u) -> tuple[float, int]:
    """Maximum of <u, p> over P and the index attaining it.

    Exact ties are resolved towards the lexicographically smallest point,
    then the smallest index.
    """
    P = np.asarray(P, dtype=float)
    if P.shape[0] == 0:
        raise ValueError("support of an empty set is undefined")
    proj = P @ np.asarray(u, dtype=float)
    best = proj.max()
    cand = np.flatnonzero(proj == best)
    if cand.size > 1:
        sub = P[cand]
        cand = cand[np.lexsort(tuple(sub[:, k] for k in range(P.shape[1] - 1, -1, -1)))]
    return float(best), int(cand[0])


def width(P, u) -> float:
    """Directional width f(P,u) + f(P,-u); zero for the empty set."""
    P = np.asarray(P, dtype=float)
    if P.shape[0] == 0:
        return 0.0
    proj = P @ np.asarray(u, dtype=float)
    return float(proj.max() - proj.min())


def widths(P, U) -> np.ndarray:
    """Widths of P along each row of U."""
    P = np.asarray(P, dtype=float)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if P.shape[0] == 0:
        return np.zeros(U.shape[0])
    proj = P @ U.T
    return proj.max(axis=0) - proj.min(axis=0)


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / n


def angle_direction(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


# ---------------------------------------------------------------------------
# hulls

def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_2d(P, rel_tol: float = ORIENT_TOL) -> np.ndarray:
    """Indices of the hull vertices in counterclockwise order (monotone chain).

    Collinear points are dropped.  Orientation tests use a tolerance of
    ``rel_tol`` times the squared coordinate magnitude.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int)
    order = np.lexsort((np.arange(n), P[:, 1], P[:, 0]))
    # drop exact duplicates, keeping the first index
    keep = [order[0]]
    for i in order[1:]:
        if P[i, 0] != P[keep[-1], 0] or P[i, 1] != P[keep[-1], 1]:
            keep.append(i)
    if len(keep) <= 2:
        return np.array(keep, dtype=int)
    scale = float(np.max(np.abs(P))) or 1.0
    tol = rel_tol * scale * scale
    lower: list[int] = []
    for i in keep:
        while len(lower) >= 2 and _cross(P[lower[-2]], P[lower[-1]], P[i]) <= tol:
            lower.pop()
        lower.append(i)
    upper: list[int] = []
    for i in reversed(keep):
        while len(upper) >= 2 and _cross(P[upper[-2]], P[upper[-1]], P[i]) <= tol:
            upper.pop()
        upper.append(i)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 2:
        hull = [keep[0], keep[-1]]
    return np.array(hull, dtype=int)


def polygon_facets(V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Outward unit normals A and offsets b (A x <= b) of a CCW polygon."""
    E = np.roll(V, -1, axis=0) - V
    N = np.stack([E[:, 1], -E[:, 0]], axis=1)
    ln = np.linalg.norm(N, axis=1)
    ok = ln > 0
    A = N[ok] / ln[ok, None]
    b = np.einsum("ij,ij->i", A, V[ok])
    return A, b


def polygon_area(V: np.ndarray) -> float:
    x, y = V[:, 0], V[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def hull_vertices(P) -> np.ndarray:
    """Indices of hull vertices for d in {1, 2, 3, ...} (full-dimensional)."""
    P = np.asarray(P, dtype=float)
    d = P.shape[1]
    if d == 1:
        return np.unique([int(np.argmin(P[:, 0])), int(np.argmax(P[:, 0]))])
    if d == 2:
        return convex_hull_2d(P)
    from scipy.spatial import ConvexHull

    return np.asarray(ConvexHull(P).vertices, dtype=int)


def hull_facets(V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Facet normals and offsets of conv(V), outward, with A x <= b inside."""
    d = V.shape[1]
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([V[:, 0].max(), -V[:, 0].min()])
    if d == 2:
        h = convex_hull_2d(V)
        return polygon_facets(V[h])
    from scipy.spatial import ConvexHull

    eq = ConvexHull(V).equations
    return eq[:, :-1], -eq[:, -1]


def affine_basis(P, rel_tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Centroid and orthonormal basis (d, r) of the affine hull of P."""
    P = np.asarray(P, dtype=float)
    c = P.mean(axis=0)
    X = P - c
    if X.shape[0] < 2:
        return c, np.zeros((P.shape[1], 0))
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    scale = max(float(np.max(np.abs(P))), 1e-300)
    r = int(np.count_nonzero(s > rel_tol * scale * max(1.0, math.sqrt(P.shape[0]))))
    return c, vt[:r].T


# ---------------------------------------------------------------------------
# direction nets

def direction_net(d: int, delta: float) -> np.ndarray:
    """Unit directions covering the sphere within ``delta``, closed under negation.

    d = 2 uses evenly spaced angles (an even count of at least 2*pi/delta).
    d >= 3 uses cell centres of a grid on every face of the cube [-1,1]^d,
    pushed onto the sphere.  Radial projection onto the ball is
    1-Lipschitz outside it, so a face spacing h gives covering radius at
    most h*sqrt(d-1)/2.
    """
    if not (0.0 < delta < 2.0):
        raise ValueError("delta must be in (0, 2)")
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        k = math.ceil(2 * math.pi / delta)
        k += k % 2
        return angle_direction(2 * math.pi * np.arange(k) / k)
    h = 2 * delta / math.sqrt(d - 1)
    m = max(1, math.ceil(2.0 / h))
    g = -1.0 + (np.arange(m) + 0.5) * (2.0 / m)
    grids = np.stack(np.meshgrid(*([g] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1)
    out = []
    for axis in range(d):
        for sign in (1.0, -1.0):
            face = np.insert(grids, axis, sign, axis=1)
            out.append(face)
    return unit(np.vstack(out))


# ---------------------------------------------------------------------------
# affine transforms and fatness

@dataclass
class AffineTransform:
    """x -> linear @ x + offset."""

    linear: np.ndarray
    offset: np.ndarray
    alpha: float | None = None
    _inv: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=float)
        self.offset = np.asarray(self.offset, dtype=float)
        if abs(np.linalg.det(self.linear)) <= 1e-12:
            raise ValueError("affine transform is singular")
        self._inv = np.linalg.inv(self.linear)

    @property
    def inverse_linear(self) -> np.ndarray:
        return self._inv

    def apply(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.linear.T + self.offset

    def apply_inverse(self, Y) -> np.ndarray:
        return (np.asarray(Y, dtype=float) - self.offset) @ self._inv.T

    def pull_direction(self, W) -> np.ndarray:
        """Direction in the source frame whose extreme point maps to the
        extreme point of the image along W."""
        return unit(np.asarray(W, dtype=float) @ self.linear)

    def inverse(self) -> "AffineTransform":
        return AffineTransform(self._inv, -self._inv @ self.offset)

    @classmethod
    def identity(cls, d: int) -> "AffineTransform":
        return cls(np.eye(d), np.zeros(d))


def lowner_ellipsoid(P, tol: float = 1e-4, max_iter: int = 100000):
    """Minimum-volume enclosing ellipsoid by Khachiyan's algorithm.

    Returns ``(center, A)`` with (x-c)^T A (x-c) <= 1 for every point.
    """
    P = np.asarray(P, dtype=float)
    n, d = P.shape
    Q = np.vstack([P.T, np.ones(n)])
    u = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        X = (Q * u) @ Q.T
        M = np.einsum("ij,ji->i", Q.T, np.linalg.solve(X, Q))
        j = int(np.argmax(M))
        mx = M[j]
        if mx <= (d + 1) * (1 + tol):
            break
        step = (mx - d - 1.0) / ((d + 1.0) * (mx - 1.0))
        u *= 1 - step
        u[j] += step
    c = P.T @ u
    S = (P.T * u) @ P - np.outer(c, c)
    A = np.linalg.inv(S) / d
    # make sure every point is covered despite the stopping tolerance
    D = P - c
    r = float(np.max(np.einsum("ij,jk,ik->i", D, A, D)))
    if r > 1:
        A = A / r
    return c, A


def fatness(Y) -> float:
    """Largest a with [-a,a]^d inside conv(Y) (origin-centred cube)."""
    A, b = hull_facets(np.asarray(Y, dtype=float))
    l1 = np.abs(A).sum(axis=1)
    return float(max(0.0, np.min(b / l1)))


def fat_transform(P) -> AffineTransform:
    """Affine map sending conv(P) between a*C and C, C = [-1,1]^d.

    The enclosing Lowner ellipsoid E of P satisfies c + (E-c)/d inside
    conv(P), so mapping E to the unit ball and then rescaling to touch the
    cube gives a >= 1/(d*sqrt(d)).  The achieved a is measured on the hull
    and stored in ``alpha``.
    """
    P = np.asarray(P, dtype=float)
    d = P.shape[1]
    _, B = affine_basis(P)
    if B.shape[1] < d:
        raise ValidationError(["input not full-dimensional"], "geom.degenerate")
    V = P[hull_vertices(P)] if d <= 3 else P
    c, A = lowner_ellipsoid(V)
    L = np.linalg.cholesky(A).T  # A = L^T L
    Y = (V - c) @ L.T
    s = 1.0 / float(np.max(np.abs(Y)))
    T = AffineTransform(s * L, -s * (L @ c))
    if d <= 3:
        T.alpha = fatness(T.apply(V))
    return T


# ---------------------------------------------------------------------------
# sandwich refinement

def _outer_vertices_2d(W: np.ndarray, vals: np.ndarray) -> np.ndarray:
    ang = np.arctan2(W[:, 1], W[:, 0])
    order = np.argsort(ang, kind="stable")
    ang, W, vals = ang[order], W[order], vals[order]
    keep = np.concatenate([[True], np.diff(ang) > 1e-13])
    W, vals = W[keep], vals[keep]
    W2, v2 = np.roll(W, -1, axis=0), np.roll(vals, -1)
    det = W[:, 0] * W2[:, 1] - W[:, 1] * W2[:, 0]
    if np.any(det <= 0):
        raise RuntimeError("probe directions do not bound the outer polygon")
    x = (vals * W2[:, 1] - v2 * W[:, 1]) / det
    y = (W[:, 0] * v2 - W2[:, 0] * vals) / det
    return np.stack([x, y], axis=1)


def _outer_vertices(W: np.ndarray, vals: np.ndarray, center: np.ndarray) -> np.ndarray:
    d = W.shape[1]
    if d == 1:
        return np.array([[vals[W[:, 0] > 0].min()], [-vals[W[:, 0] < 0].min()]])
    if d == 2:
        return _outer_vertices_2d(W, vals)
    from scipy.spatial import HalfspaceIntersection

    hs = np.hstack([W, -vals[:, None]])
    return HalfspaceIntersection(hs, center).intersections


@dataclass
class SandwichResult:
    hits: np.ndarray        # hull vertices of the probe hits
    hit_ids: np.ndarray     # index into the probe sequence
    eta: float              # outer polytope inside (1+eta) * inner hull
    n_probes: int
    rounds: int


def sandwich(probe, init_dirs: np.ndarray, eps: float, max_rounds: int = 200) -> SandwichResult:
    """Refine extreme-point probes until the (1+eps) sandwich holds.

    ``probe(W)`` returns the extreme points (k, d) of the body along the unit
    rows of W.  The body must be full-dimensional and ``init_dirs`` must
    positively span R^d.
    """
    W = np.asarray(init_dirs, dtype=float)
    H = np.asarray(probe(W), dtype=float)
    dirs, hits = [W], [H]
    rounds = 0
    eta = np.inf
    while True:
        Wall = np.vstack(dirs)
        Hall = np.vstack(hits)
        vals = np.einsum("ij,ij->i", Wall, Hall)
        hv = hull_vertices(Hall)
        V = Hall[hv]
        c = V.mean(axis=0)
        A, b = hull_facets(V)
        slack = b - A @ c
        Z = _outer_vertices(Wall, vals, c)
        G = (A @ (Z - c).T) / slack[:, None]
        g = G.max(axis=0)
        eta = float(g.max() - 1.0)
        rounds += 1
        if eta <= eps or rounds >= max_rounds:
            break
        bad = g > 1.0 + eps
        fac = np.unique(np.argmax(G[:, bad], axis=0))
        cand = A[fac] / np.linalg.norm(A[fac], axis=1, keepdims=True)
        # skip normals that were already probed
        cos = cand @ Wall.T
        new = cand[np.max(cos, axis=1) < 1.0 - 1e-13]
        if new.shape[0] == 0:
            break
        dirs.append(new)
        hits.append(np.asarray(probe(new), dtype=float))
    return SandwichResult(V, hv, max(eta, 0.0), int(Wall.shape[0]), rounds)


# ---------------------------------------------------------------------------
# kernels

@dataclass
class DeterministicKernel:
    points: np.ndarray
    source_indices: np.ndarray | None
    epsilon: float
    transform: AffineTransform | None = None
    degenerate: bool = False
    certified_ratio: float = 1.0
    n_probes: int = 0

    def __len__(self) -> int:
        return int(self.points.shape[0])


def kernel_size_bound(eps: float, d: int, const: float = KERNEL_SIZE_CONST) -> float:
    return const / eps ** ((d - 1) / 2.0)


def initial_net(d: int) -> np.ndarray:
    return direction_net(d, 0.4 if d == 2 else 0.5)


def kernel_from_oracle(probe, d: int, eps: float, seed_dirs: np.ndarray | None = None):
    """Epsilon-kernel of a body known through an extreme-point oracle.

    Returns ``(points, probe_ids, transform, eta, degenerate, n_probes)``;
    ``probe_ids`` index the rows of all probe calls made, in order.
    Degenerate bodies are handled inside their affine hull.
    """
    rows = [0]

    def counted(W):
        rows[0] += W.shape[0]
        return probe(W)

    return _kernel_from_oracle(counted, rows, d, eps, seed_dirs)


def _kernel_from_oracle(probe, rows, d, eps, seed_dirs):
    W0 = initial_net(d) if seed_dirs is None else seed_dirs
    H0 = np.asarray(probe(W0), dtype=float)
    c0, B = affine_basis(H0)
    r = B.shape[1]
    if r < d:
        # probe along the missing directions before calling it degenerate
        _, _, vt = np.linalg.svd(np.eye(d) - B @ B.T)
        extra = vt[: d - r]
        Wx = np.vstack([extra, -extra])
        Hx = np.asarray(probe(Wx), dtype=float)
        H0 = np.vstack([H0, Hx])
        W0 = np.vstack([W0, Wx])
        c0, B = affine_basis(H0)
        r = B.shape[1]
    if r < d:
        return _degenerate_kernel(probe, rows, H0, c0, B, eps)
    c, A = lowner_ellipsoid(H0[hull_vertices(H0)] if d <= 3 else H0)
    L = np.linalg.cholesky(A).T
    T = AffineTransform(L, -L @ c)

    def probe_frame(Wf):
        return T.apply(probe(T.pull_direction(Wf)))

    offset = rows[0]
    res = sandwich(probe_frame, initial_net(d), eps)
    pts = T.apply_inverse(res.hits)
    return pts, res.hit_ids + offset, T, res.eta, False, rows[0]


def _degenerate_kernel(probe, rows, H0, c0, B, eps):
    d = H0.shape[1]
    r = B.shape[1]
    if r == 0:
        return H0[:1].copy(), np.array([0]), None, 0.0, True, rows[0]
    if r == 1:
        e = B[:, 0]
        offset = rows[0]
        H = np.asarray(probe(np.vstack([e, -e])), dtype=float)
        return H, np.array([offset, offset + 1]), None, 0.0, True, rows[0]

    def probe_sub(Ws):
        return (np.asarray(probe(unit(Ws @ B.T)), dtype=float) - c0) @ B

    Hs = (H0 - c0) @ B
    cs, As = lowner_ellipsoid(Hs[hull_vertices(Hs)])
    L = np.linalg.cholesky(As).T
    T = AffineTransform(L, -L @ cs)
    offset = rows[0]
    res = sandwich(lambda Wf: T.apply(probe_sub(T.pull_direction(Wf))), initial_net(r), eps)
    pts = T.apply_inverse(res.hits) @ B.T + c0
    return pts, res.hit_ids + offset, None, res.eta, True, rows[0]


def point_set_oracle(P: np.ndarray):
    """Extreme-point oracle over an explicit set with the global tie rule.

    The returned callable maps directions to indices into P.
    """
    P = np.asarray(P, dtype=float)
    order = np.lexsort(tuple(P[:, k] for k in range(P.shape[1] - 1, -1, -1)))
    Ps = P[order]

    def argmax_ids(W):
        # argmax returns the first maximum, i.e. the lexicographic winner
        return order[np.argmax(Ps @ np.atleast_2d(W).T, axis=0)]

    return argmax_ids


def eps_kernel(P, eps: float) -> DeterministicKernel:
    """Subset of P whose widths are within (1-eps) of P's in every direction.

    Small hulls are returned whole (they are exact kernels).  Otherwise the
    sandwich refinement runs on P's extreme-point oracle.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] == 0:
        raise ValueError("eps_kernel needs a nonempty (n, d) array")
    if not (0.0 < eps < 1.0):
        raise ValueError("eps must be in (0, 1)")
    n, d = P.shape
    c0, B = affine_basis(P)
    r = B.shape[1]
    if r < d:
        return _degenerate_point_kernel(P, eps, c0, B)
    if d <= 3:
        hv = hull_vertices(P)
        if hv.size <= kernel_size_bound(eps, d):
            return DeterministicKernel(P[hv].copy(), hv.copy(), eps)
    ids = point_set_oracle(P)
    probe_log: list[np.ndarray] = []

    def probe(W):
        i = ids(W)
        probe_log.append(i)
        return P[i]

    pts, hit_ids, T, eta, _, nprobe = kernel_from_oracle(probe, d, eps)
    src = np.concatenate(probe_log)[hit_ids]
    src = np.unique(src)
    return DeterministicKernel(P[src].copy(), src, eps, T, False, 1.0 / (1.0 + eta), nprobe)


def _degenerate_point_kernel(P, eps, c0, B) -> DeterministicKernel:
    n, d = P.shape
    r = B.shape[1]
    if r == 0:
        return DeterministicKernel(P[:1].copy(), np.array([0]), eps, None, True)
    Q = (P - c0) @ B
    if r == 1:
        i = int(np.argmin(Q[:, 0]))
        j = int(np.argmax(Q[:, 0]))
        src = np.unique([i, j])
        return DeterministicKernel(P[src].copy(), src, eps, None, True)
    sub = eps_kernel(Q, eps)
    src = sub.source_indices
    return DeterministicKernel(P[src].copy(), src, eps, None, True, sub.certified_ratio, sub.n_probes)
