"""Ground-truth engines used to certify the constructions.

Everything here works straight from the definitions: realizations are
enumerated (or sampled) explicitly and widths are taken on each one.  None
of it touches the sweep machinery in ``width``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ExistentialSet, LocationalSet, StochkernelError

MAX_BITS = 24
Z99 = 2.5758293035489004  # two-sided 99% normal quantile


class EnumerationTooLarge(StochkernelError):
    code = "oracle.too_many_bits"


def _as_directions(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return u.reshape(1, -1) if u.ndim == 1 else u


def _options(s):
    """Per-point option lists: location indices, -1 meaning absent."""
    opts, probs = [], []
    for i in range(s.n_points):
        idx = np.flatnonzero(s.owner == i)
        p = s.probs[idx]
        rest = 1.0 - p.sum()
        if rest > 1e-15:
            idx = np.append(idx, -1)
            p = np.append(p, rest)
        opts.append(idx)
        probs.append(p)
    return opts, probs


def realization_count(s) -> int:
    opts, _ = _options(s)
    return int(np.prod([len(o) for o in opts], dtype=float))


def _check_bits(s, cap: int = MAX_BITS) -> None:
    bits = s.realization_bits()
    if bits > cap:
        raise EnumerationTooLarge(f"enumeration needs {bits} realization bits, cap is {cap}")


def iter_realizations(s, chunk: int = 1 << 15, cap: int = MAX_BITS):
    """Yield ``(loc, prob)`` blocks covering every realization.

    ``loc`` is (R, n_points) with the chosen location index per point (-1 when
    absent) and ``prob`` is (R,) with the realization probabilities.
    """
    _check_bits(s, cap)
    opts, probs = _options(s)
    radix = np.array([len(o) for o in opts], dtype=np.int64)
    total = int(np.prod(radix))
    npts = len(opts)
    for start in range(0, max(total, 1), chunk):
        r = np.arange(start, min(start + chunk, total), dtype=np.int64)
        loc = np.empty((r.size, npts), dtype=np.int64)
        pr = np.ones(r.size)
        rem = r.copy()
        for i in range(npts):
            k = rem % radix[i]
            rem //= radix[i]
            loc[:, i] = opts[i][k]
            pr *= probs[i][k]
        yield loc, pr


def _direction_blocks(s, k: int, budget: int = 1 << 24):
    """Slices of direction indices keeping realizations x slots x directions under budget."""
    _check_bits(s)
    rows = min(realization_count(s), 1 << 15) * max(s.coords.shape[0], 1)
    step = max(1, budget // rows)
    return [slice(i, min(i + step, k)) for i in range(0, k, step)]


def _extent_stat(proj: np.ndarray, loc: np.ndarray, transform=None) -> np.ndarray:
    """max - min of (transformed) projections per realization; 0 if empty."""
    if transform is not None:
        proj = transform(proj)
    m, k = proj.shape
    padded_hi = np.vstack([proj, np.full((1, k), -np.inf)])
    padded_lo = np.vstack([proj, np.full((1, k), np.inf)])
    li = np.where(loc < 0, m, loc)
    hi = padded_hi[li].max(axis=1)
    lo = padded_lo[li].min(axis=1)
    out = hi - lo
    out[~np.isfinite(out)] = 0.0
    return out


def enumerate_expected(s, directions, transform=None) -> np.ndarray:
    """E[max g(<u,v>) - min g(<u,v>)] over all realizations, per direction."""
    U = _as_directions(directions)
    acc = np.zeros(U.shape[0])
    for cols in _direction_blocks(s, U.shape[0]):
        proj = s.coords @ U[cols].T
        for loc, pr in iter_realizations(s):
            acc[cols] += pr @ _extent_stat(proj, loc, transform)
    return acc


def enumerate_expected_width(s, u):
    """Exact expected directional width by full enumeration."""
    out = enumerate_expected(s, u)
    return float(out[0]) if np.asarray(u).ndim == 1 else out


def enumerate_expected_support(s, u) -> float:
    """E[max <u,v>] with the empty realization contributing 0."""
    U = _as_directions(u)
    acc = np.zeros(U.shape[0])
    m = s.coords.shape[0]
    for cols in _direction_blocks(s, U.shape[0]):
        proj = s.coords @ U[cols].T
        pad = np.vstack([proj, np.full((1, proj.shape[1]), -np.inf)])
        for loc, pr in iter_realizations(s):
            hi = pad[np.where(loc < 0, m, loc)].max(axis=1)
            hi[~np.isfinite(hi)] = 0.0
            acc[cols] += pr @ hi
    return float(acc[0]) if np.asarray(u).ndim == 1 else acc


def enumerate_probability_total(s) -> float:
    return float(sum(pr.sum() for _, pr in iter_realizations(s)))


def width_distribution(s, directions, transform=None):
    """All realization widths (R, k) with their probabilities (R,)."""
    U = _as_directions(directions)
    proj = s.coords @ U.T
    vals, probs = [], []
    for loc, pr in iter_realizations(s):
        vals.append(_extent_stat(proj, loc, transform))
        probs.append(pr)
    return np.vstack(vals), np.concatenate(probs)


def _mixture_cdf(kernel, U, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.zeros((U.shape[0], t.size))
    total = float(np.sum(kernel.counts))
    for pts, c in zip(kernel.members, kernel.counts):
        if len(pts) == 0:
            w = np.zeros(U.shape[0])
        else:
            pr = np.asarray(pts) @ U.T
            w = pr.max(axis=0) - pr.min(axis=0)
        out += c * (w[:, None] <= t[None, :])
    return out / total


def enumerate_width_cdf(obj, u, t):
    """Pr[width <= t] by enumeration (closed ``<=`` semantics).

    ``obj`` may be an uncertain set, a Bernoulli kernel (treated as an
    existential set) or a mixture kernel (counted directly).
    """
    U = _as_directions(u)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if hasattr(obj, "members"):
        out = _mixture_cdf(obj, U, t_arr)
    else:
        s = obj.as_set() if hasattr(obj, "as_set") else obj
        proj = s.coords @ U.T
        out = np.zeros((U.shape[0], t_arr.size))
        for loc, pr in iter_realizations(s):
            w = _extent_stat(proj, loc)
            out += np.einsum("r,rkt->kt", pr, (w[:, :, None] <= t_arr[None, None, :]))
    out = np.clip(out, 0.0, 1.0)
    if np.asarray(u).ndim == 1 and np.ndim(t) == 0:
        return float(out[0, 0])
    if np.asarray(u).ndim == 1:
        return out[0]
    return out


def mc_estimate(s, u, statistic="width", n_samples: int = 10000, seed=0):
    """Monte Carlo mean of a per-realization statistic with a 99% CI.

    ``statistic`` is ``"width"`` or ``("t_r", r)``.  Returns
    ``(mean, ci_halfwidth)``; deterministic given the seed.
    """
    from .model import sample_choices

    U = _as_directions(u)
    transform = None
    if statistic != "width":
        name, r = statistic
        if name != "t_r":
            raise ValueError(f"unknown statistic {statistic!r}")
        transform = lambda x: np.maximum(x, 0.0) ** (1.0 / r)
    rng = np.random.default_rng(seed)
    proj = s.coords @ U.T
    m = s.n_locations
    vals = []
    left = n_samples
    while left > 0:
        b = min(left, 1 << 14)
        masks = sample_choices(s, b, rng)
        # rebuild a location matrix padded with -1 for absent slots
        loc = np.where(masks, np.arange(m)[None, :], -1)
        vals.append(_extent_stat(proj, loc, transform))
        left -= b
    v = np.vstack(vals)
    mean = v.mean(axis=0)
    sd = v.std(axis=0, ddof=1) if n_samples > 1 else np.zeros_like(mean)
    half = Z99 * sd / np.sqrt(n_samples)
    half[v.max(axis=0) == v.min(axis=0)] = 0.0
    if np.asarray(u).ndim == 1:
        return float(mean[0]), float(half[0])
    return mean, half


@dataclass
class BandReport:
    rows: list[tuple] = field(default_factory=list)
    eps: float = 0.0
    tau: float = 0.0

    @property
    def pass_fraction(self) -> float:
        if not self.rows:
            return 1.0
        return sum(r[5] for r in self.rows) / len(self.rows)

    @property
    def passed(self) -> bool:
        return all(r[5] for r in self.rows)


BAND_SLACK = 1e-9


def band_check(reference, kernel, eps: float, tau: float, directions, t_values,
               kernel_cdf=None, reference_cdf=None) -> BandReport:
    """Compare a kernel's width CDF against the reference band.

    Each row is ``(direction_index, t, lower, kernel_cdf, upper, in_band)``
    with lower = F_ref((1-eps)t) - tau and upper = F_ref((1+eps)t) + tau.
    """
    U = _as_directions(directions)
    t = np.asarray(t_values, dtype=float)
    ref = reference_cdf or (lambda UU, tt: enumerate_width_cdf(reference, UU, tt))
    ker = kernel_cdf or (lambda UU, tt: enumerate_width_cdf(kernel, UU, tt))
    lo = ref(U, (1.0 - eps) * t) - tau
    hi = ref(U, (1.0 + eps) * t) + tau
    kc = ker(U, t)
    rep = BandReport(eps=eps, tau=tau)
    for i in range(U.shape[0]):
        for j in range(t.size):
            ok = bool(lo[i, j] - BAND_SLACK <= kc[i, j] <= hi[i, j] + BAND_SLACK)
            rep.rows.append((i, float(t[j]), float(lo[i, j] + tau), float(kc[i, j]),
                             float(hi[i, j] - tau), ok))
    return rep


def kolmogorov_distance(a, b) -> float:
    """sup_t |F_a(t) - F_b(t)| for two discrete laws given as (values, probs)."""
    va, pa = (np.asarray(x, dtype=float) for x in a)
    vb, pb = (np.asarray(x, dtype=float) for x in b)
    grid = np.union1d(va, vb)
    oa, ob = np.argsort(va), np.argsort(vb)
    ca = np.concatenate([[0.0], np.cumsum(pa[oa])])
    cb = np.concatenate([[0.0], np.cumsum(pb[ob])])
    fa = ca[np.searchsorted(va[oa], grid, side="right")]
    fb = cb[np.searchsorted(vb[ob], grid, side="right")]
    return float(np.max(np.abs(fa - fb))) if grid.size else 0.0


def tukey_depth_brute(points, weights, x, angle_tol: float = 1e-9) -> float:
    """Weighted Tukey depth of ``x`` in the plane.

    Minimum weight of a closed halfplane whose boundary passes through
    ``x``.  The weight only changes when the boundary line crosses an input
    point, so it is enough to test one normal direction inside every gap
    between consecutive crossing angles.  Crossing angles closer than
    ``angle_tol`` are merged and points within ``angle_tol`` of the boundary
    count as inside, which makes the result stable for ``x`` computed in
    floating point on a line through input points.
    """
    P = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    x = np.asarray(x, dtype=float)
    diff = P - x
    r = np.hypot(diff[:, 0], diff[:, 1])
    scale = max(1.0, float(np.max(np.abs(P))) if P.size else 1.0)
    at_x = r <= 1e-12 * scale
    base = float(w[at_x].sum())
    diff, w = diff[~at_x], w[~at_x]
    if diff.shape[0] == 0:
        return base
    psi = np.mod(np.arctan2(diff[:, 1], diff[:, 0]), 2 * np.pi)
    # a point at angle psi lies in the closed halfplane with normal angle phi
    # iff |psi - phi| <= pi/2; crossings at phi = psi +- pi/2
    ev = np.sort(np.mod(np.concatenate([psi + np.pi / 2, psi - np.pi / 2]), 2 * np.pi))
    keep = np.concatenate([[True], np.diff(ev) > angle_tol])
    ev = ev[keep]
    if ev.size > 1 and (ev[0] + 2 * np.pi - ev[-1]) <= angle_tol:
        ev = ev[:-1]
    nxt = np.concatenate([ev[1:], [ev[0] + 2 * np.pi]])
    phis = 0.5 * (ev + nxt)
    order = np.argsort(psi)
    ps = np.concatenate([psi[order] + k * 2 * np.pi for k in range(3)])
    wo = np.tile(w[order], 3)
    inf = ~np.isfinite(wo)
    cw = np.concatenate([[0.0], np.cumsum(np.where(inf, 0.0, wo))])
    ci = np.concatenate([[0], np.cumsum(inf)])
    lo = np.mod(phis - np.pi / 2, 2 * np.pi) + 2 * np.pi - angle_tol
    hi = lo + np.pi + 2 * angle_tol
    i = np.searchsorted(ps, lo, side="left")
    j = np.searchsorted(ps, hi, side="right")
    tot = np.where(ci[j] - ci[i] > 0, np.inf, cw[j] - cw[i])
    best = float(tot.min())
    return base + float(best)


def tukey_depth_many(points, weights, xs, angle_tol: float = 1e-9) -> np.ndarray:
    return np.array([tukey_depth_brute(points, weights, x, angle_tol) for x in np.atleast_2d(xs)])
