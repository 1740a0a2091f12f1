"""Uncertain point sets: representations, validation, sampling and JSON I/O.

Two uncertainty models are supported.  In the existential model every point
``v`` is present independently with probability ``p_v``.  In the locational
model every point picks one of its locations independently (or none, when
its location probabilities sum to less than one).

Internally both models are stored as a *location table*: ``coords`` (m, d),
``probs`` (m,) and ``owner`` (m,), where ``owner[i]`` is the index of the
uncertain point that location ``i`` belongs to.  An existential set is the
special case with one location per point.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

PROB_SLACK = 1e-12


class StochkernelError(ValueError):
    """Base error carrying a module-qualified code."""

    code = "stochkernel.error"

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ValidationError(StochkernelError):
    code = "model.invalid"

    def __init__(self, violations: Sequence[str], code: str | None = None):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations), code)


class PreconditionError(StochkernelError):
    code = "precondition"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


class _LocationTable:
    coords: np.ndarray
    probs: np.ndarray
    owner: np.ndarray
    n_points: int

    @property
    def dimension(self) -> int:
        return int(self.coords.shape[1])

    @property
    def n_locations(self) -> int:
        return int(self.coords.shape[0])

    def point_mass(self) -> np.ndarray:
        """Total location probability of every uncertain point."""
        return np.bincount(self.owner, weights=self.probs, minlength=self.n_points)

    def empty_probability(self) -> float:
        """Probability that the realization is empty."""
        return float(np.prod(np.clip(1.0 - self.point_mass(), 0.0, 1.0)))

    def realization_bits(self) -> int:
        raise NotImplementedError


class ExistentialSet(_LocationTable):
    """Points in R^d, each present independently with probability p."""

    model = "existential"

    def __init__(self, coords, probs):
        coords = np.asarray(coords, dtype=float)
        if coords.ndim == 1:
            coords = coords.reshape(-1, 1) if coords.size else coords.reshape(0, 1)
        self.coords = _frozen(coords)
        self.probs = _frozen(np.asarray(probs, dtype=float).reshape(-1))
        self.owner = _frozen(np.arange(self.coords.shape[0]))
        self.n_points = int(self.coords.shape[0])

    @classmethod
    def from_points(cls, points: Iterable[tuple[Sequence[float], float]]) -> "ExistentialSet":
        pts = list(points)
        d = len(pts[0][0]) if pts else 1
        return cls(np.array([c for c, _ in pts], dtype=float).reshape(len(pts), d),
                   [p for _, p in pts])

    def realization_bits(self) -> int:
        # points with p = 1 are always present and need no bit
        return int(np.count_nonzero(self.probs < 1.0))

    def subset(self, indices) -> "ExistentialSet":
        idx = np.asarray(indices, dtype=int)
        return ExistentialSet(self.coords[idx], self.probs[idx])

    def __repr__(self) -> str:
        return f"ExistentialSet(n={self.n_points}, d={self.dimension})"


class LocationalSet(_LocationTable):
    """Points whose location is drawn from a finite distribution."""

    model = "locational"

    def __init__(self, coords, probs, owner, n_points: int | None = None):
        coords = np.asarray(coords, dtype=float)
        self.coords = _frozen(coords)
        self.probs = _frozen(np.asarray(probs, dtype=float).reshape(-1))
        owner = np.asarray(owner, dtype=int).reshape(-1)
        self.owner = _frozen(owner)
        if n_points is None:
            n_points = int(owner.max()) + 1 if owner.size else 0
        self.n_points = int(n_points)

    @classmethod
    def from_points(cls, points: Iterable[Iterable[tuple[Sequence[float], float]]]) -> "LocationalSet":
        coords, probs, owner = [], [], []
        pts = [list(locs) for locs in points]
        for i, locs in enumerate(pts):
            for c, p in locs:
                coords.append(list(c))
                probs.append(p)
                owner.append(i)
        d = len(coords[0]) if coords else 1
        return cls(np.array(coords, dtype=float).reshape(len(coords), d), probs, owner, len(pts))

    def locations_of(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.owner == i)

    def realization_bits(self) -> int:
        counts = np.bincount(self.owner, minlength=self.n_points)
        return int(sum(math.ceil(math.log2(c + 1)) for c in counts))

    def __repr__(self) -> str:
        return f"LocationalSet(n={self.n_points}, m={self.n_locations}, d={self.dimension})"


UncertainSet = ExistentialSet | LocationalSet


@dataclass(frozen=True)
class Realization:
    points: np.ndarray
    indices: np.ndarray  # location indices into the source table

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class Lambda:
    per_point: np.ndarray
    total: float


@dataclass
class ValidationReport:
    valid: bool
    violations: list[str] = field(default_factory=list)
    dimension: int | None = None
    beta: float | None = None
    n_points: int = 0
    n_locations: int = 0

    def raise_if_invalid(self) -> None:
        if not self.valid:
            raise ValidationError(self.violations)


# ---------------------------------------------------------------------------
# validation

def _check_raw_points(raw: dict) -> ValidationReport:
    """Validate an instance given as a parsed JSON dictionary."""
    v: list[str] = []
    model = raw.get("model")
    if model not in ("existential", "locational"):
        v.append(f"unknown model {model!r}")
        return ValidationReport(False, v)
    dim = raw.get("dimension")
    pts = raw.get("points")
    if not isinstance(pts, list):
        return ValidationReport(False, ["points must be a list"])
    dims = set()
    coords_all = []
    if model == "existential":
        for i, pt in enumerate(pts):
            c = pt.get("coords") if isinstance(pt, dict) else None
            if not isinstance(c, list):
                v.append(f"point {i}: missing coords")
                continue
            dims.add(len(c))
            coords_all.append(c)
            _check_prob(pt.get("p"), f"point {i}", v)
    else:
        for i, pt in enumerate(pts):
            locs = pt.get("locations") if isinstance(pt, dict) else None
            if not isinstance(locs, list) or not locs:
                v.append(f"point {i}: missing locations")
                continue
            for j, loc in enumerate(locs):
                c = loc.get("coords") if isinstance(loc, dict) else None
                if not isinstance(c, list):
                    v.append(f"point {i} location {j}: missing coords")
                    continue
                dims.add(len(c))
                coords_all.append(c)
                _check_prob(loc.get("p"), f"point {i} location {j}", v)
    if dim is not None:
        dims.add(dim)
    if len(dims) > 1:
        v.append(f"dimension mismatch: {sorted(dims)}")
    for c in coords_all:
        if not all(isinstance(x, (int, float)) and math.isfinite(x) for x in c):
            v.append("coordinates must be finite numbers")
            break
    return ValidationReport(not v, v)


def _check_prob(p, where: str, v: list[str]) -> None:
    if not isinstance(p, (int, float)) or not math.isfinite(p) or not (0.0 < p <= 1.0):
        v.append(f"{where}: probability must be in (0,1], got {p!r}")


def validate(obj) -> ValidationReport:
    """Check an uncertain set (or a raw instance dictionary).

    Reports every violation found: probability bounds, non-finite
    coordinates, dimension mismatch, per-point mass above one and locations
    shared between points.  ``beta`` is the smallest probability.
    """
    if isinstance(obj, dict):
        rep = _check_raw_points(obj)
        if not rep.valid:
            return rep
        obj = from_dict(obj, check=False)
    v: list[str] = []
    coords, probs = obj.coords, obj.probs
    if coords.ndim != 2 or coords.shape[0] != probs.shape[0]:
        return ValidationReport(False, ["coordinate/probability arrays disagree"])
    if obj.n_points == 0:
        v.append("instance has no points")
    if coords.shape[1] < 1:
        v.append("dimension must be at least 1")
    if not np.all(np.isfinite(coords)):
        v.append("coordinates must be finite")
    bad = np.flatnonzero(~((probs > 0.0) & (probs <= 1.0)))
    for i in bad[:20]:
        v.append(f"location {int(i)}: probability must be in (0,1], got {probs[i]!r}")
    if isinstance(obj, LocationalSet):
        mass = obj.point_mass()
        for i in np.flatnonzero(mass > 1.0 + PROB_SLACK):
            v.append(f"point {int(i)}: location probabilities sum to {mass[i]!r} > 1")
        missing = np.flatnonzero(np.bincount(obj.owner, minlength=obj.n_points) == 0)
        for i in missing:
            v.append(f"point {int(i)}: no locations")
        if coords.shape[0] > 1 and np.all(np.isfinite(coords)):
            order = np.lexsort(coords.T[::-1])
            c = coords[order]
            same = np.all(c[1:] == c[:-1], axis=1)
            for k in np.flatnonzero(same):
                a, b = order[k], order[k + 1]
                if obj.owner[a] != obj.owner[b]:
                    v.append(f"duplicate location shared by points {int(obj.owner[a])} and {int(obj.owner[b])}")
                else:
                    v.append(f"duplicate location within point {int(obj.owner[a])}")
    beta = float(probs.min()) if probs.size else None
    return ValidationReport(not v, v, obj.dimension, beta, obj.n_points, obj.n_locations)


def require_valid(s) -> None:
    validate(s).raise_if_invalid()


def require_beta(s, beta: float) -> None:
    """Raise unless every probability is at least ``beta``."""
    if not (0.0 < beta <= 1.0):
        raise PreconditionError(f"beta must be in (0,1], got {beta}", "model.beta")
    lo = float(np.min(s.probs))
    if lo < beta - PROB_SLACK:
        raise PreconditionError(
            f"beta-assumption violated: smallest probability {lo} < beta = {beta}", "model.beta")


# ---------------------------------------------------------------------------
# sampling

def sample_choices(s, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Draw realizations as a boolean inclusion matrix over locations.

    Returns an (n_samples, m) boolean array; for the locational model at most
    one location per point is set in every row.
    """
    m = s.n_locations
    if isinstance(s, ExistentialSet):
        return rng.random((n_samples, m)) < s.probs
    # locational: one uniform per point, inverse CDF over its locations
    u = rng.random((n_samples, s.n_points))
    order = np.lexsort((np.arange(m), s.owner))
    cum = np.empty(m)
    ow = s.owner[order]
    cs = np.cumsum(s.probs[order])
    start = np.searchsorted(ow, ow, side="left")
    base = np.where(start > 0, cs[start - 1], 0.0)
    cum_hi = cs - base
    cum_lo = cum_hi - s.probs[order]
    cum[order] = cum_hi
    lo = np.empty(m)
    lo[order] = cum_lo
    uu = u[:, s.owner]
    return (uu >= lo) & (uu < cum)


def sample_realization(s, rng_seed) -> Realization:
    """One realization, deterministic given the seed."""
    rng = np.random.default_rng(rng_seed)
    mask = sample_choices(s, 1, rng)[0]
    idx = np.flatnonzero(mask)
    return Realization(s.coords[idx].copy(), idx)


def sample_counts(s, n_samples: int, rng: np.random.Generator,
                  chunk: int = 1 << 16) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``n_samples`` realizations and merge identical ones.

    Returns ``(masks, counts)``: unique inclusion rows (k, m) and their
    multiplicities, in order of first appearance.
    """
    m = s.n_locations
    seen: dict[bytes, int] = {}
    rows: list[np.ndarray] = []
    counts: list[int] = []
    done = 0
    while done < n_samples:
        b = min(chunk, n_samples - done)
        masks = sample_choices(s, b, rng)
        packed = np.packbits(masks, axis=1)
        uniq, first, cnt = np.unique(packed, axis=0, return_index=True, return_counts=True)
        for j in np.argsort(first):
            key = uniq[j].tobytes()
            if key in seen:
                counts[seen[key]] += int(cnt[j])
            else:
                seen[key] = len(rows)
                rows.append(masks[first[j]])
                counts.append(int(cnt[j]))
        done += b
    if not rows:
        return np.zeros((0, m), dtype=bool), np.zeros(0, dtype=int)
    return np.array(rows), np.array(counts)


def lambda_of(s: ExistentialSet) -> Lambda:
    """Poisson rates lambda_v = -ln(1 - p_v) and their total."""
    if not isinstance(s, ExistentialSet):
        raise PreconditionError("lambda is defined for existential sets only", "model.lambda")
    if np.any(s.probs >= 1.0):
        raise PreconditionError("Poissonization undefined at p=1", "model.lambda")
    lam = -np.log1p(-s.probs)
    return Lambda(lam, float(lam.sum()))


# ---------------------------------------------------------------------------
# JSON

def to_dict(s) -> dict[str, Any]:
    if isinstance(s, ExistentialSet):
        pts = [{"coords": [float(x) for x in c], "p": float(p)} for c, p in zip(s.coords, s.probs)]
        return {"model": "existential", "dimension": s.dimension, "points": pts}
    pts = []
    for i in range(s.n_points):
        idx = s.locations_of(i)
        pts.append({"locations": [{"coords": [float(x) for x in s.coords[j]], "p": float(s.probs[j])}
                                  for j in idx]})
    return {"model": "locational", "dimension": s.dimension, "points": pts}


def from_dict(raw: dict, check: bool = True):
    if check:
        rep = _check_raw_points(raw)
        if not rep.valid:
            raise ValidationError(rep.violations)
    d = int(raw.get("dimension") or 0)
    if raw["model"] == "existential":
        pts = raw["points"]
        coords = np.array([pt["coords"] for pt in pts], dtype=float).reshape(len(pts), -1 if pts else d)
        s = ExistentialSet(coords, [pt["p"] for pt in pts])
    else:
        s = LocationalSet.from_points(
            [[(loc["coords"], loc["p"]) for loc in pt["locations"]] for pt in raw["points"]])
    if check:
        validate(s).raise_if_invalid()
    return s


def _reject_constant(name: str):
    raise ValidationError([f"non-finite number {name} in JSON"])


def loads(text: str) -> dict:
    """Parse JSON, refusing NaN and infinities."""
    return json.loads(text, parse_constant=_reject_constant)


def dumps(obj: dict) -> str:
    return json.dumps(obj, allow_nan=False)


def load_instance(path: str):
    with open(path) as fh:
        return from_dict(loads(fh.read()))


def save_instance(s, path: str, **extra) -> None:
    d = to_dict(s)
    d.update(extra)
    with open(path, "w") as fh:
        fh.write(dumps(d))
