"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 unmet precondition.
JSON floats are written with Python's shortest round-trip repr and CSV
floats the same way, so repeated runs with the same seed are byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys

import numpy as np

from . import apps, expkernel, fpowkernel, geom, oracle, quantkernel, width
from .model import (ExistentialSet, LocationalSet, PreconditionError, StochkernelError, ValidationError,
                    dumps, from_dict, load_instance, loads, save_instance, to_dict)

SCHEMA = 1
PRESETS = ("uniform-disk", "circle", "clustered", "negative-lemma", "locational-grid")


# ---------------------------------------------------------------------------
# instance generation

def _probabilities(n: int, args, rng) -> np.ndarray:
    if args.p is not None:
        return np.full(n, float(args.p))
    lo = args.beta if args.beta is not None else 0.05
    return rng.uniform(lo, 1.0, size=n)


def _ball(n: int, d: int, rng) -> np.ndarray:
    X = geom.unit(rng.normal(size=(n, d)))
    return X * rng.random(n)[:, None] ** (1.0 / d)


def generate(preset: str, n: int, d: int, args, rng):
    if preset == "uniform-disk":
        return ExistentialSet(_ball(n, d, rng), _probabilities(n, args, rng))
    if preset == "circle":
        if d == 2:
            th = 2 * math.pi * np.arange(n) / n
            X = np.c_[np.cos(th), np.sin(th)]
        else:
            X = geom.unit(rng.normal(size=(n, d)))
        return ExistentialSet(X, _probabilities(n, args, rng))
    if preset == "clustered":
        k = max(1, int(round(math.sqrt(n) / 4)))
        centers = rng.uniform(-1, 1, size=(k, d))
        lab = rng.integers(k, size=n)
        X = centers[lab] + 0.05 * rng.normal(size=(n, d))
        return ExistentialSet(X, _probabilities(n, args, rng))
    if preset == "negative-lemma":
        X = np.zeros((n, d))
        X[n // 2:, 0] = 1.0
        return ExistentialSet(X, np.full(n, 1.0 / n))
    if preset == "locational-grid":
        # each point picks one of 2..3 jittered grid cells
        side = max(1, int(math.ceil(math.sqrt(n))))
        pts = []
        for i in range(n):
            base = np.array([i % side, i // side] + [0] * (d - 2), dtype=float) / side
            k = int(rng.integers(2, 4))
            w = rng.dirichlet(np.ones(k)) * (args.p if args.p is not None else 1.0)
            locs = base + 0.5 / side * rng.random((k, d))
            pts.append([(locs[j], float(w[j])) for j in range(k)])
        return LocationalSet.from_points(pts)
    raise ValidationError([f"unknown preset {preset!r}"])


# ---------------------------------------------------------------------------
# output helpers

def _num(x):
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return [_num(v) for v in x.tolist()]
    if isinstance(x, dict):
        return {str(k): _num(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    return x


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.ndarray):
        return " ".join(repr(float(v)) for v in x)
    return str(x)


def write_csv(path: str | None, header: list[str], rows) -> None:
    fh = sys.stdout if path in (None, "-") else open(path, "w", newline="")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    finally:
        if fh is not sys.stdout:
            fh.close()


def write_json(path: str | None, obj) -> None:
    text = dumps(_num(obj))
    if path in (None, "-"):
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _direction(text: str, d: int) -> np.ndarray:
    u = np.array([float(x) for x in text.split(",")])
    if u.size != d:
        raise ValidationError([f"direction has {u.size} components, instance has dimension {d}"])
    if not np.all(np.isfinite(u)) or np.linalg.norm(u) == 0:
        raise ValidationError(["direction must be finite and nonzero"])
    return geom.unit(u)


def _directions(d: int, count: int, seed: int) -> np.ndarray:
    if d == 2:
        return geom.angle_direction(2 * math.pi * np.arange(count) / count)
    return geom.unit(np.random.default_rng(seed).normal(size=(count, d)))


# ---------------------------------------------------------------------------
# kernel files

def kernel_to_dict(kernel, instance, kind: str) -> dict:
    out = {"schema": SCHEMA, "kind": kind, "instance": to_dict(instance)}
    if kind == "deterministic":
        out.update(points=kernel.points, epsilon=kernel.epsilon, degenerate=kernel.degenerate,
                   certified_ratio=kernel.certified_ratio)
    elif kind == "subset":
        out.update(indices=kernel.indices, epsilon=kernel.epsilon, beta=kernel.beta, rounds=kernel.rounds)
    elif kind == "mixture":
        out.update(members=[np.asarray(m).reshape(-1, instance.dimension) for m in kernel.members],
                   counts=kernel.counts, method=kernel.method, params=kernel.params)
    elif kind == "bernoulli":
        out.update(coords=kernel.coords, probs=kernel.probs, n_anchors=kernel.n_anchors,
                   method=kernel.method, params=kernel.params)
    elif kind == "fpow":
        out.update(members=[np.asarray(m).reshape(-1, instance.dimension) for m in kernel.members],
                   counts=kernel.counts, r=kernel.r, epsilon=kernel.epsilon, params=kernel.params)
    return out


def kernel_from_dict(raw: dict):
    if raw.get("schema") != SCHEMA:
        raise ValidationError([f"unsupported kernel schema {raw.get('schema')!r}"])
    s = from_dict(raw["instance"])
    d = s.dimension
    kind = raw["kind"]

    def members():
        return [np.asarray(m, dtype=float).reshape(-1, d) for m in raw["members"]]

    if kind == "deterministic":
        k = geom.DeterministicKernel(np.asarray(raw["points"], dtype=float).reshape(-1, d), None,
                                     raw["epsilon"], None, raw["degenerate"], raw["certified_ratio"])
    elif kind == "subset":
        idx = np.asarray(raw["indices"], dtype=int)
        k = expkernel.SubsetKernel(idx, s.subset(idx), raw["epsilon"], raw["beta"], 0.0, 0.0, raw["rounds"])
    elif kind == "mixture":
        k = quantkernel.MixtureKernel(members(), np.asarray(raw["counts"]), d, raw["method"], raw["params"])
    elif kind == "bernoulli":
        k = quantkernel.BernoulliKernel(np.asarray(raw["coords"], dtype=float).reshape(-1, d),
                                        np.asarray(raw["probs"], dtype=float), raw["n_anchors"],
                                        raw["method"], raw["params"])
    elif kind == "fpow":
        k = fpowkernel.FpowKernel(members(), np.asarray(raw["counts"]), raw["r"], raw["epsilon"], raw["params"])
    else:
        raise ValidationError([f"unknown kernel kind {kind!r}"])
    return kind, k, s


def _kind_of(kernel) -> str:
    if isinstance(kernel, geom.DeterministicKernel):
        return "deterministic"
    if isinstance(kernel, expkernel.SubsetKernel):
        return "subset"
    if isinstance(kernel, quantkernel.MixtureKernel):
        return "mixture"
    if isinstance(kernel, quantkernel.BernoulliKernel):
        return "bernoulli"
    return "fpow"


# ---------------------------------------------------------------------------
# reports

def width_rows(s, kernel, U):
    rep = expkernel.sweep(s, kernel, U)
    return [(U[i], rep.omega_set[i], rep.omega_kernel[i], rep.ratio[i]) for i in range(U.shape[0])]


def t_grid(s, count: int = 20) -> np.ndarray:
    P = s.coords
    diam = float(np.max(np.linalg.norm(P - P.mean(axis=0), axis=1))) * 2.0
    return np.linspace(0.05, 1.0, count) * (diam if diam > 0 else 1.0)


def band_rows(s, kernel, eps, tau, U, t, against: str, seed: int, n_mc: int):
    ker_cdf = None
    if hasattr(kernel, "cdf") and not isinstance(kernel, expkernel.SubsetKernel):
        ker_cdf = kernel.cdf
    elif isinstance(kernel, expkernel.SubsetKernel):
        ker_cdf = lambda UU, tt: quantkernel.cdf(kernel.kernel, UU, tt).values
    if against == "exact":
        ref_cdf = lambda UU, tt: quantkernel.cdf(s, UU, tt).values
    else:
        ref_cdf = lambda UU, tt: quantkernel.monte_carlo_width_cdf(s, UU, tt, n_mc, seed).values
    rep = oracle.band_check(s, kernel, eps, tau, U, t, kernel_cdf=ker_cdf, reference_cdf=ref_cdf)
    return [(U[r[0]], r[1], r[2], r[3], r[4], r[5]) for r in rep.rows], rep


def fpow_rows(s, kernel, U, against: str, seed: int, n_mc: int):
    est = kernel.expected(U)
    if against == "exact":
        ref = oracle.enumerate_expected(s, U, lambda x: np.maximum(x, 0.0) ** (1.0 / kernel.r))
    else:
        ref, _ = oracle.mc_estimate(s, U, ("t_r", kernel.r), n_mc, seed)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(ref > 0, np.abs(est - ref) / ref, np.abs(est))
    return [(U[i], ref[i], est[i], rel[i]) for i in range(U.shape[0])]


BAND_HEADER = ["direction", "t", "cdf_lo_ref", "cdf_kernel", "cdf_hi_ref", "in_band"]
WIDTH_HEADER = ["direction", "omega_P", "omega_S", "ratio"]
FPOW_HEADER = ["direction", "Etr_ref", "Etr_kernel", "rel_err"]


# ---------------------------------------------------------------------------
# commands

def cmd_gen(args) -> int:
    rng = np.random.default_rng(args.seed)
    s = generate(args.preset, args.n, args.d, args, rng)
    save_instance(s, args.out, preset=args.preset, seed=args.seed)
    return 0


def cmd_width(args) -> int:
    s = load_instance(args.instance)
    u = _direction(args.dir, s.dimension)
    if args.support:
        f, _ = width.expected_support(s, u)
        print(repr(float(f)))
    else:
        print(repr(float(width.expected_width(s, u))))
    return 0


def cmd_sweep(args) -> int:
    s = load_instance(args.instance)
    if s.dimension != 2:
        raise PreconditionError("sweep needs d = 2", "width.unsupported_dimension")
    st = width.build_angular(s)
    theta = 2 * math.pi * np.arange(args.angles) / args.angles
    fp = st.query_support(theta)
    fm = st.query_support(theta + math.pi)
    write_csv(args.out, ["theta", "expected_width", "f_plus", "f_minus"],
              [(theta[i], fp[i] + fm[i], fp[i], fm[i]) for i in range(theta.size)])
    return 0


def cmd_polytope(args) -> int:
    s = load_instance(args.instance)
    M = width.build_M(s)
    write_json(args.out, {"schema": SCHEMA, "vertices": M.vertices, "n_cones": M.n_cones})
    return 0


def cmd_expkernel(args) -> int:
    s = load_instance(args.instance)
    if args.subset:
        if args.beta is None:
            raise PreconditionError("--subset needs --beta", "expkernel.beta")
        k = expkernel.exp_kernel_subset(s, args.eps, args.beta)
    else:
        k = expkernel.exp_kernel(s, args.eps)
    write_json(args.out, kernel_to_dict(k, s, _kind_of(k)))
    if args.report:
        write_csv(args.report, WIDTH_HEADER, width_rows(s, k, expkernel.verification_directions(s.dimension)))
    return 0


def cmd_quantkernel(args) -> int:
    s = load_instance(args.instance)
    k = quantkernel.build(s, args.method, args.eps, args.tau, args.delta, args.seed, args.beta)
    write_json(args.out, kernel_to_dict(k, s, _kind_of(k)))
    if args.report:
        U = _directions(s.dimension, args.directions, args.seed)
        rows, _ = band_rows(s, k, args.eps, args.tau, U, t_grid(s), "exact", args.seed, args.mc_samples)
        write_csv(args.report, BAND_HEADER, rows)
    return 0


def cmd_fpowkernel(args) -> int:
    s = load_instance(args.instance)
    k = fpowkernel.fpow_kernel(s, args.eps, args.r, args.beta, args.seed, max_samples=args.max_samples)
    write_json(args.out, kernel_to_dict(k, s, "fpow"))
    if args.report:
        U = fpowkernel.polar_directions(s, args.directions, args.seed)
        write_csv(args.report, FPOW_HEADER, fpow_rows(s, k, U, "exact", args.seed, args.mc_samples))
    return 0


def cmd_eval(args) -> int:
    with open(args.kernel) as fh:
        kind, k, s = kernel_from_dict(loads(fh.read()))
    if args.instance:
        s = load_instance(args.instance)
    if kind == "deterministic" or (kind == "subset" and args.mode == "width"):
        U = expkernel.verification_directions(s.dimension)
        if args.against == "exact":
            rows = width_rows(s, k, U)
        else:
            ref, _ = oracle.mc_estimate(s, U, "width", args.mc_samples, args.seed)
            omk = geom.widths(k.points, U) if kind == "deterministic" else width.expected_widths(k.kernel, U)
            rows = [(U[i], ref[i], omk[i], omk[i] / ref[i] if ref[i] > 0 else 1.0) for i in range(U.shape[0])]
        write_csv(args.out, WIDTH_HEADER, rows)
        print(f"min_ratio {min(float(r[3]) for r in rows)!r}", file=sys.stderr)
        return 0
    if kind == "fpow":
        U = fpowkernel.polar_directions(s, args.directions, args.seed)
        rows = fpow_rows(s, k, U, args.against, args.seed, args.mc_samples)
        write_csv(args.out, FPOW_HEADER, rows)
        print(f"max_rel_err {max(float(r[3]) for r in rows)!r}", file=sys.stderr)
        return 0
    eps = args.eps if args.eps is not None else float(getattr(k, "params", {}).get("eps", 0.2) or 0.2)
    tau = args.tau if args.tau is not None else float(getattr(k, "params", {}).get("tau", 0.2) or 0.2)
    U = _directions(s.dimension, args.directions, args.seed)
    rows, rep = band_rows(s, k, eps, tau, U, t_grid(s), args.against, args.seed, args.mc_samples)
    write_csv(args.out, BAND_HEADER, rows)
    print(f"pass_fraction {rep.pass_fraction!r}", file=sys.stderr)
    return 0


def cmd_fit(args) -> int:
    s = load_instance(args.instance)
    fn = apps.expected_meb if args.shape == "meb" else apps.expected_shell
    r = fn(s, args.eps, args.beta, args.seed, max_samples=args.max_samples)
    write_json(args.out, {"center": r.center, "value": r.value, "coreset_size": r.coreset_size,
                          "optimizer_gap": r.optimizer_gap})
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochkernel", description="Coresets for uncertain point sets.")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker threads for compiled sweeps (default: all cores); results do not depend on it")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate an instance file")
    g.add_argument("preset", choices=PRESETS)
    g.add_argument("--n", type=int, required=True, help="number of points")
    g.add_argument("--d", type=int, default=2, help="dimension")
    pg = g.add_mutually_exclusive_group()
    pg.add_argument("--p", type=float, help="common probability (locational: total mass per point)")
    pg.add_argument("--beta", type=float, help="draw probabilities uniformly from [beta, 1]")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--out", required=True, help="output JSON path")
    g.set_defaults(func=cmd_gen)

    w = sub.add_parser("width", help="expected width (or support) along one direction")
    w.add_argument("instance")
    w.add_argument("--dir", required=True, help="comma-separated direction, normalized internally")
    w.add_argument("--support", action="store_true", help="print the expected support instead")
    w.set_defaults(func=cmd_width)

    sw = sub.add_parser("sweep", help="expected width over an angle grid (d = 2)")
    sw.add_argument("instance")
    sw.add_argument("--angles", type=int, default=360)
    sw.add_argument("-o", "--out", default=None, help="CSV path (default stdout)")
    sw.set_defaults(func=cmd_sweep)

    po = sub.add_parser("polytope", help="vertices of the expectation polytope (d = 2)")
    po.add_argument("instance")
    po.add_argument("-o", "--out", default=None)
    po.set_defaults(func=cmd_polytope)

    ek = sub.add_parser("expkernel", help="kernel for the expected width")
    ek.add_argument("instance")
    ek.add_argument("--eps", type=float, required=True)
    ek.add_argument("--subset", action="store_true", help="keep original points (needs --beta)")
    ek.add_argument("--beta", type=float)
    ek.add_argument("--seed", type=int, default=0, help="unused; the construction is deterministic")
    ek.add_argument("-o", "--out", required=True, help="kernel JSON path")
    ek.add_argument("--report", help="width-ratio CSV path")
    ek.set_defaults(func=cmd_expkernel)

    qk = sub.add_parser("quantkernel", help="kernel for the width distribution")
    qk.add_argument("instance")
    qk.add_argument("--method", default="auto", choices=["auto", "simple", "poisson", "tukey", "tukey-fast", "subset"])
    qk.add_argument("--eps", type=float, required=True)
    qk.add_argument("--tau", type=float, required=True)
    qk.add_argument("--delta", type=float, default=0.01)
    qk.add_argument("--beta", type=float)
    qk.add_argument("--seed", type=int, default=0)
    qk.add_argument("--directions", type=int, default=64)
    qk.add_argument("--mc-samples", type=int, default=20000)
    qk.add_argument("-o", "--out", required=True)
    qk.add_argument("--report", help="band CSV path (exact reference)")
    qk.set_defaults(func=cmd_quantkernel)

    fk = sub.add_parser("fpowkernel", help="kernel for expected root extents")
    fk.add_argument("instance")
    fk.add_argument("--eps", type=float, required=True)
    fk.add_argument("--r", type=int, required=True)
    fk.add_argument("--beta", type=float, required=True)
    fk.add_argument("--seed", type=int, default=0)
    fk.add_argument("--max-samples", type=int, default=None, help="cap on sampled realizations (recorded)")
    fk.add_argument("--directions", type=int, default=64)
    fk.add_argument("--mc-samples", type=int, default=20000)
    fk.add_argument("-o", "--out", required=True)
    fk.add_argument("--report", help="relative-error CSV path")
    fk.set_defaults(func=cmd_fpowkernel)

    ev = sub.add_parser("eval", help="check a kernel file against the instance it was built from")
    ev.add_argument("--kernel", required=True)
    ev.add_argument("--instance", help="override the embedded instance")
    ev.add_argument("--against", choices=["exact", "mc"], default="exact")
    ev.add_argument("--mode", choices=["band", "width"], default="band",
                    help="subset kernels: distribution band or expected-width ratio")
    ev.add_argument("--eps", type=float)
    ev.add_argument("--tau", type=float)
    ev.add_argument("--directions", type=int, default=64)
    ev.add_argument("--mc-samples", type=int, default=20000)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("-o", "--out", default=None)
    ev.set_defaults(func=cmd_eval)

    ft = sub.add_parser("fit", help="expected enclosing ball or shell")
    ft.add_argument("shape", choices=["meb", "shell"])
    ft.add_argument("instance")
    ft.add_argument("--eps", type=float, required=True)
    ft.add_argument("--beta", type=float, required=True)
    ft.add_argument("--seed", type=int, default=0)
    ft.add_argument("--max-samples", type=int, default=None)
    ft.add_argument("-o", "--out", default=None)
    ft.set_defaults(func=cmd_fit)
    return ap


def _set_threads(k: int | None) -> None:
    if k is None:
        return
    import numba

    numba.set_num_threads(max(1, min(int(k), numba.config.NUMBA_NUM_THREADS)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _set_threads(args.threads)
        return int(args.func(args) or 0)
    except ValidationError as e:
        print(f"error [{e.code or 'model.validation'}]: {e}", file=sys.stderr)
        return 2
    except (PreconditionError, StochkernelError) as e:
        print(f"error [{e.code or 'precondition'}]: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
