"""Command line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from contextlib import contextmanager

import numpy as np

from . import __version__
from . import config as kv
from . import integrator
from .benes import GridSpec, MixtureInit, benes_exact_rotated, monte_carlo_convolve, relative_l2_error, rotation
from .config import RunConfig
from .errors import CheckpointError, ConfigError, NgnfError
from .evaluator import Surrogate

log = logging.getLogger("ngnf")


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def _write_csv(out, header, rows):
    out.write(",".join(header) + "\n")
    for row in rows:
        out.write(",".join(_fmt(v) for v in row) + "\n")


@contextmanager
def _output(path):
    if path is None or path == "-":
        yield sys.stdout
        return
    try:
        fh = open(path, "w", newline="\n", encoding="utf-8")
    except OSError as exc:
        raise CheckpointError(f"cannot open {path} for writing: {exc}") from exc
    with fh:
        yield fh


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"cannot parse vector {text!r}: expected comma-separated numbers") from exc


def _grid(args) -> GridSpec:
    if args.n < 2 or not args.hi > args.lo:
        raise ConfigError("grid needs hi > lo and at least 2 nodes per axis")
    return GridSpec(args.lo, args.hi, args.n)


def _exact_rot(sur: Surrogate):
    if sur.model.name != "benes_rot":
        raise ConfigError("--exact is only available for the benes_rot model")
    return rotation(dict(sur.model.params)["angle"])


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    from .training import train

    cfg = RunConfig.load(args.config)
    log_path = args.log or f"{args.out}.log.csv"
    with _output(log_path) as fh:
        ckpt = train(cfg, fh)
    integrator.save(ckpt, args.out)
    log.info("wrote %s (%d checkpoints)", args.out, ckpt.times.size)
    return 0


def cmd_grid(args) -> int:
    sur = Surrogate.from_checkpoint(args.ckpt)
    x0 = _vector(args.x0)
    tau = sur.elapsed(args.t)
    if args.line is not None:
        xs = np.linspace(args.lo, args.hi, args.n)
        pts = np.column_stack([xs, np.full_like(xs, args.line)])
    else:
        pts = _grid(args).points()
    vals = sur.density(pts, args.t, x0)
    header = ["x1", "x2", "density"]
    cols = [pts[:, 0], pts[:, 1], vals]
    if args.line is not None:
        # display-only rescaling to [0, 1] along the line
        header.append("density_scaled")
        cols.append(vals / vals.max())
    if args.exact:
        ex = benes_exact_rotated(pts, tau, x0, _exact_rot(sur))
        header.append("exact")
        cols.append(ex)
        if args.line is not None:
            header.append("exact_scaled")
            cols.append(ex / ex.max())
    with _output(args.out) as out:
        _write_csv(out, header, zip(*cols))
    return 0


def cmd_error(args) -> int:
    sur = Surrogate.from_checkpoint(args.ckpt)
    x0 = _vector(args.x0)
    grid = _grid(args)
    rot = _exact_rot(sur)
    rows = []
    for t in _vector(args.t):
        tau = sur.elapsed(t)
        if args.self_test:
            approx = lambda x, tau_, x0_: benes_exact_rotated(x, tau_, x0_, rot)
        else:
            approx = sur
        rows.append((t, relative_l2_error(approx, tau, x0, grid, rot)))
    with _output(args.out) as out:
        _write_csv(out, ["t", "rel_l2"], rows)
    return 0


def cmd_sample(args) -> int:
    sur = Surrogate.from_checkpoint(args.ckpt)
    pts = sur.sample(args.t, _vector(args.x0), args.count, np.random.default_rng(args.seed))
    with _output(args.out) as out:
        _write_csv(out, [f"x{i + 1}" for i in range(pts.shape[1])], pts)
    return 0


def cmd_convolve(args) -> int:
    sur = Surrogate.from_checkpoint(args.ckpt)
    p0 = MixtureInit.from_mapping(kv.section(kv.load(args.mixture), "mixture")) if args.mixture else MixtureInit()
    pts = _grid(args).points()
    rng = np.random.default_rng(args.seed)
    x0s = p0.sample(args.n_mc, rng)
    tau = sur.elapsed(args.t)
    vals = monte_carlo_convolve(sur.tpdf, x0s, pts, tau)
    header = ["x1", "x2", "density"]
    cols = [pts[:, 0], pts[:, 1], vals]
    if args.exact:
        rot = _exact_rot(sur)
        header.append("exact")
        cols.append(monte_carlo_convolve(lambda x, tt, y: benes_exact_rotated(x, tt, y, rot), x0s, pts, tau))
    with _output(args.out) as out:
        _write_csv(out, header, zip(*cols))
    return 0


def cmd_selftest(args) -> int:
    from . import selftest

    ok = selftest.run(sys.stdout)
    return 0 if ok else 3


# ---------------------------------------------------------------------------


def _add_grid_args(p, n_default):
    p.add_argument("--lo", type=float, default=GridSpec.lo, help="lower grid bound on each axis")
    p.add_argument("--hi", type=float, default=GridSpec.hi, help="upper grid bound on each axis")
    p.add_argument("--n", type=int, default=n_default, help="grid nodes per axis")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ngnf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="offline training run")
    p.add_argument("config", help="run configuration (flat key = value file)")
    p.add_argument("-o", "--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="density on a rectangular grid or along a line")
    p.add_argument("ckpt")
    p.add_argument("--x0", required=True, help="initial point, e.g. --x0=1.5,-1")
    p.add_argument("--t", type=float, required=True)
    _add_grid_args(p, GridSpec.n)
    p.add_argument("--line", type=float, metavar="X2", help="dump along x1 at fixed x2 instead of a 2-D grid")
    p.add_argument("--exact", action="store_true", help="add the closed-form Benes density column")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("error", help="relative L2 error against the exact Benes density")
    p.add_argument("ckpt")
    p.add_argument("--x0", required=True)
    p.add_argument("--t", required=True, help="comma-separated times")
    _add_grid_args(p, GridSpec.n)
    p.add_argument("--self-test", action="store_true", help="compare the exact density with itself")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_error)

    p = sub.add_parser("sample", help="draw from the learned transition density")
    p.add_argument("ckpt")
    p.add_argument("--x0", required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("convolve", help="density for a mixture initial law by Monte Carlo convolution")
    p.add_argument("ckpt")
    p.add_argument("--mixture", help="mixture description (mixture.weights/means/covs); default: two-component reference mixture")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--n-mc", type=int, default=1750)
    p.add_argument("--seed", type=int, default=0)
    _add_grid_args(p, 61)
    p.add_argument("--exact", action="store_true", help="add the exact-kernel convolution column")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_convolve)

    p = sub.add_parser("selftest", help="run the built-in oracle checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except NgnfError as exc:
        print(f"ngnf: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"ngnf: error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
