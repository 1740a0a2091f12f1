"""Kernels for the expected width.

``exp_kernel`` never materializes the expectation polytope M: it only asks
for extreme vertices of M (one sort per direction) and hands those probes
to the oracle-driven kernel construction in ``geom``.  The output points
are vertices of M, so their widths never exceed the expected widths.

``exp_kernel_subset`` keeps original points.  It repeatedly extracts a
deterministic kernel of the remaining points and deletes it, so that along
every direction some chosen point near the top is present with high
probability.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import geom, width
from .model import ExistentialSet, PreconditionError, require_beta, require_valid

# size constant of the peeled subset kernel: |S| <= C / eps^((d-1)/2) * ln(1/eps)
# frozen at beta = 0.5: the largest measured ratio was 142 (points on a circle,
# n = 2000, eps = 0.2); 256 leaves headroom below the analytic ~1000
SUBSET_SIZE_CONST = 256.0


def _check_eps(eps: float) -> None:
    if not (0.0 < eps <= 0.5):
        raise PreconditionError("eps must be in (0, 1/2]", "expkernel.eps")


def exp_kernel(s, eps: float) -> geom.DeterministicKernel:
    """Deterministic points whose widths are within (1-eps) of the expected widths."""
    require_valid(s)
    _check_eps(eps)
    d = s.dimension
    pts, _, T, eta, degenerate, nprobe = geom.kernel_from_oracle(width.probe(s), d, eps)
    if degenerate:
        warnings.warn("expectation polytope is lower-dimensional; kernel built in its affine hull",
                      stacklevel=2)
    pts = _dedupe_rows(pts)
    return geom.DeterministicKernel(pts, None, eps, T, degenerate, 1.0 / (1.0 + eta), nprobe)


def _dedupe_rows(X: np.ndarray) -> np.ndarray:
    _, first = np.unique(X, axis=0, return_index=True)
    return X[np.sort(first)]


@dataclass
class SubsetKernel:
    """Subset of an existential set with the original probabilities."""

    indices: np.ndarray
    kernel: ExistentialSet
    epsilon: float
    beta: float
    alpha: float
    inner_eps: float
    rounds: int

    def __len__(self) -> int:
        return int(self.indices.size)

    @property
    def points(self) -> np.ndarray:
        return self.kernel.coords

    @property
    def probs(self) -> np.ndarray:
        return self.kernel.probs


def peel_parameters(eps: float, beta: float, alpha: float, d: int) -> tuple[float, int]:
    """Inner kernel accuracy eps1 and the number of peeling rounds."""
    eps1 = eps * alpha * beta * beta / (4.0 * math.sqrt(d))
    if beta >= 1.0:
        return eps1, 1
    rounds = max(1, math.ceil(math.log(eps1) / math.log(1.0 - beta)))
    return eps1, rounds


def subset_size_bound(eps: float, d: int, const: float = SUBSET_SIZE_CONST) -> float:
    return const / eps ** ((d - 1) / 2.0) * math.log(1.0 / eps)


def _fatness_of(P: np.ndarray) -> float:
    d = P.shape[1]
    try:
        T = geom.fat_transform(P)
    except Exception:
        return d ** -1.5
    return T.alpha if T.alpha is not None else d ** -1.5


def exp_kernel_subset(s: ExistentialSet, eps: float, beta: float) -> SubsetKernel:
    """Subset exp-kernel under the beta-assumption by peeling deterministic kernels."""
    require_valid(s)
    _check_eps(eps)
    if not isinstance(s, ExistentialSet):
        raise PreconditionError("subset kernels need an existential set", "expkernel.model")
    require_beta(s, beta)
    P = np.asarray(s.coords, dtype=float)
    d = P.shape[1]
    # the peeling argument treats every point as deterministic here
    alpha = _fatness_of(P)
    eps1, rounds = peel_parameters(eps, beta, alpha, d)
    inner = eps1 / math.sqrt(d)
    remaining = np.arange(P.shape[0])
    chosen: list[np.ndarray] = []
    done = 0
    for _ in range(rounds):
        if remaining.size == 0:
            break
        K = geom.eps_kernel(P[remaining], inner)
        pick = remaining[K.source_indices]
        chosen.append(pick)
        remaining = np.setdiff1d(remaining, pick, assume_unique=True)
        done += 1
    idx = np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=int)
    return SubsetKernel(idx, s.subset(idx), eps, beta, alpha, eps1, done)


@dataclass
class SweepReport:
    directions: np.ndarray
    omega_set: np.ndarray
    omega_kernel: np.ndarray

    @property
    def ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            r = self.omega_kernel / self.omega_set
        return np.where(self.omega_set > 0, r, 1.0)

    def min_ratio(self) -> float:
        return float(self.ratio.min())

    def max_excess(self) -> float:
        return float(np.max(self.omega_kernel - self.omega_set))


def verification_directions(d: int, n_random: int = 1000, seed: int = 0) -> np.ndarray:
    """Dense sweep net plus random directions."""
    if d == 2:
        net = geom.angle_direction(2 * math.pi * np.arange(4096) / 4096)
    else:
        net = geom.direction_net(d, math.sqrt(d - 1) / 20.0)
    rng = np.random.default_rng(seed)
    return np.vstack([net, geom.unit(rng.normal(size=(n_random, d)))])


def sweep(s, kernel, directions: np.ndarray | None = None) -> SweepReport:
    """Expected widths of the set against widths of a deterministic or subset kernel."""
    U = verification_directions(s.dimension) if directions is None else directions
    omega = width.expected_widths(s, U)
    if isinstance(kernel, SubsetKernel):
        omk = width.expected_widths(kernel.kernel, U) if len(kernel) else np.zeros(U.shape[0])
    else:
        omk = geom.widths(kernel.points, U)
    return SweepReport(U, omega, omk)
