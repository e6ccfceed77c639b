"""Command-line entry point ``mtp2``.

Exit status is 0 on success, 2 for invalid arguments or input, and 3 when a
file cannot be read or written.  Solver iteration caps never change the exit
status; they show up in the diagnostics output instead.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import bench
from .density import (
    empirical_density,
    fit_density,
    fixed_scaling_grid_size,
    hellinger_sq_continuous,
    hellinger_sq_pc,
    cell_average_density,
    select_grid_size,
)
from .errors import InvalidParameters, MTP2Error
from .grid import CountGrid, grid_to_json, read_grid, write_grid_csv
from .projection import BoxBounds, ProjectionOptions, dykstra_project
from .solver import SolverOptions, fit_mle
from .synth import (
    SeededRng,
    TruncatedGaussianSpec,
    make_supermodular_pmf,
    sample_multinomial,
    sample_truncated_gaussian,
    truncated_gaussian_density,
)

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3
TRUTHS = ("truncated-gaussian",)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _globals(suppress: bool) -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    g.add_argument("--out", default=d(None), help="output path (default: stdout)")
    g.add_argument("--format", choices=("csv", "json"), default=d("csv"), help="output format")
    g.add_argument("--threads", type=int, default=d(1), help="worker threads for benchmarks")
    g.add_argument("--paper-scale", action="store_true", default=d(False),
                   help="use the full-size benchmark sweeps")
    return p


def _solver_flags(p: argparse.ArgumentParser, default_variant: str = "mle"):
    p.add_argument("--variant", choices=("mle", "box", "lb"), default=default_variant)
    p.add_argument("--epsilon", type=float, default=math.exp(-30.0), help="mass floor for --variant lb")
    p.add_argument("--inner-tol", type=float, default=1e-6)
    p.add_argument("--outer-tol", type=float, default=1e-5)
    p.add_argument("--max-inner", type=int, default=400_000)
    p.add_argument("--max-outer", type=int, default=100)


def build_parser() -> argparse.ArgumentParser:
    common = _globals(suppress=True)
    parser = _Parser(prog="mtp2", description="MTP2 density estimation on grids and the unit square.",
                     parents=[_globals(suppress=False)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen", help="generate synthetic data", parents=[common])
    gsub = gen.add_subparsers(dest="what", required=True, parser_class=_Parser)
    gg = gsub.add_parser("grid", help="multinomial counts from the supermodular family", parents=[common])
    gg.add_argument("--n", type=int, required=True)
    gg.add_argument("--log-L", type=float, required=True)
    gg.add_argument("--N", type=int, required=True)
    gg.add_argument("--meta", help="metadata JSON path (default: <out>.meta.json or stderr)")
    gp = gsub.add_parser("points", help="samples from the truncated Gaussian", parents=[common])
    gp.add_argument("--N", type=int, required=True)
    gp.add_argument("--meta", help="metadata JSON path (default: <out>.meta.json or stderr)")

    fg = sub.add_parser("fit-grid", help="fit the MTP2 MLE to a count grid", parents=[common])
    fg.add_argument("counts", help="counts grid (CSV or JSON envelope)")
    _solver_flags(fg)
    fg.add_argument("--diagnostics", help="diagnostics JSON path (default: <out>.diag.json or stderr)")

    fd = sub.add_parser("fit-density", help="fit a piecewise-constant MTP2 density to samples",
                        parents=[common])
    fd.add_argument("samples", help="two-column CSV of points in [0,1]^2")
    size = fd.add_mutually_exclusive_group(required=True)
    size.add_argument("--n", type=int)
    size.add_argument("--auto-n", nargs=3, type=float, metavar=("BETA", "R", "DMIN"))
    size.add_argument("--fixed-scaling", nargs=2, type=float, metavar=("C", "BETA"))
    fd.add_argument("--estimator", choices=("mle", "box", "lb", "empirical"), default=None,
                    help="shorthand for --variant, or 'empirical' for Y/N")
    _solver_flags(fd)
    fd.add_argument("--truth", choices=TRUTHS, help="report distances to this registered density")
    fd.add_argument("--meta", help="metadata JSON path (default: <out>.meta.json or stderr)")

    pr = sub.add_parser("project", help="weighted projection onto the supermodular cone", parents=[common])
    pr.add_argument("grid")
    pr.add_argument("weights")
    pr.add_argument("--lower", help="lower-bound grid")
    pr.add_argument("--upper", help="upper-bound grid")
    pr.add_argument("--rel-tol", type=float, default=1e-6)
    pr.add_argument("--max-sweeps", type=int, default=400_000)
    pr.add_argument("--diagnostics", help="diagnostics JSON path (default: <out>.diag.json or stderr)")

    bp = sub.add_parser("bench", help="run a benchmark sweep", parents=[common])
    bp.add_argument("kind", choices=[k.value for k in bench.ExperimentKind])
    bp.add_argument("--sweep", type=float, nargs="+", help="values of the swept parameter")
    bp.add_argument("--replicates", type=int)
    bp.add_argument("--estimators", nargs="+", choices=bench.ESTIMATORS)
    bp.add_argument("--n", type=int, help="grid size when it is not swept")
    bp.add_argument("--log-L", type=float)
    bp.add_argument("--N", type=int, help="sample size when it is not swept")
    bp.add_argument("--oracle-ns", type=int, nargs="+")
    bp.add_argument("--beta", type=float)
    bp.add_argument("--C", type=float)
    bp.add_argument("--axis", choices=("n", "N"), help="swept quantity of a runtime benchmark")
    bp.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"), help="regression range")
    bp.add_argument("--inner-tol", type=float)
    bp.add_argument("--outer-tol", type=float)
    bp.add_argument("--max-inner", type=int)
    bp.add_argument("--max-outer", type=int)
    bp.add_argument("--heatmaps", metavar="DIR", help="also write truth/empirical/MLE heat-map grids")
    return parser


# --- helpers ----------------------------------------------------------------


def _write_text(path, text: str):
    if path is None:
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _side_json(obj, explicit, out, suffix):
    text = json.dumps(obj, sort_keys=True, indent=1) + "\n"
    if explicit is None and out is None:
        sys.stderr.write(text)
        return
    _write_text(explicit if explicit is not None else f"{out}{suffix}", text)


def _grid_text(grid, fmt: str, integer: bool = False) -> str:
    a = np.asarray(grid)
    if fmt == "json":
        env = grid_to_json(a)
        if integer:
            env["data"] = [int(v) for v in env["data"]]
        return json.dumps(env) + "\n"
    rows = []
    for row in a:
        rows.append(",".join(str(int(v)) if integer else repr(float(v)) for v in row))
    return "\n".join(rows) + "\n"


def _read(path) -> np.ndarray:
    try:
        return read_grid(path)
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _solver_options(args, variant=None) -> SolverOptions:
    return SolverOptions(
        variant=variant or args.variant,
        outer_rel_tol=args.outer_tol,
        max_outer=args.max_outer,
        inner=ProjectionOptions(rel_tol=args.inner_tol, max_sweeps=args.max_inner),
        epsilon=args.epsilon,
    )


def _check_seed(seed: int):
    if not 0 <= seed < 2**64:
        raise InvalidParameters("--seed must be an unsigned 64-bit integer")


# --- commands ---------------------------------------------------------------


def cmd_gen(args) -> int:
    _check_seed(args.seed)
    rng = SeededRng(args.seed)
    if args.what == "grid":
        if args.N < 0:
            raise InvalidParameters("--N must be nonnegative")
        p = make_supermodular_pmf(args.n, math.exp(args.log_L))
        Y = sample_multinomial(p, args.N, rng)
        _write_text(args.out, _grid_text(Y.counts, args.format, integer=True))
        meta = {"generator": "supermodular-pmf", "n": args.n, "log_L": args.log_L, "N": args.N,
                "rng": rng.metadata()}
    else:
        pts = sample_truncated_gaussian(args.N, rng)
        if args.format == "json":
            text = json.dumps({"points": pts.tolist()}) + "\n"
        else:
            text = "".join(f"{x!r},{y!r}\n" for x, y in pts.tolist())
        _write_text(args.out, text)
        spec = TruncatedGaussianSpec()
        meta = {"generator": "truncated-gaussian", "mean": list(spec.mean),
                "cov": [list(r) for r in spec.cov], "N": args.N, "rng": rng.metadata()}
    _side_json(meta, args.meta, args.out, ".meta.json")
    return EXIT_OK


def cmd_fit_grid(args) -> int:
    Y = CountGrid(_read(args.counts))
    res = fit_mle(Y, _solver_options(args))
    _write_text(args.out, _grid_text(res.p_hat.mass, args.format))
    _side_json(res.diagnostics(), args.diagnostics, args.out, ".diag.json")
    return EXIT_OK


def _read_points(path) -> np.ndarray:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if Path(path).suffix.lower() == ".json":
        pts = np.asarray(json.loads(text)["points"], dtype=float)
    else:
        rows = [line.split(",") for line in text.splitlines() if line.strip()]
        if any(len(r) != 2 for r in rows):
            raise InvalidParameters(f"{path}: every row needs exactly two columns")
        pts = np.array(rows, dtype=float)
    return pts.reshape(-1, 2)


def cmd_fit_density(args) -> int:
    pts = _read_points(args.samples)
    N = len(pts)
    if args.n is not None:
        n = args.n
    elif args.auto_n is not None:
        beta, R, dmin = args.auto_n
        n = select_grid_size(N, beta, R, dmin)
    else:
        C, beta = args.fixed_scaling
        n = fixed_scaling_grid_size(N, C, beta)
    estimator = args.estimator or args.variant
    if estimator == "empirical":
        f = empirical_density(pts, n)
    else:
        f = fit_density(pts, n, _solver_options(args, estimator))
    _write_text(args.out, _grid_text(f.cells.mass, args.format))
    meta = {"n": n, "N": N, "variant": estimator}
    if f.fit is not None:
        meta["diagnostics"] = f.fit.diagnostics()
    if args.truth is not None:
        rho = truncated_gaussian_density()
        meta["truth"] = args.truth
        meta["H2_to_truth"] = hellinger_sq_continuous(f, rho)
        meta["H2_variance_part"] = hellinger_sq_pc(f, cell_average_density(rho, n))
    _side_json(meta, args.meta, args.out, ".meta.json")
    return EXIT_OK


def cmd_project(args) -> int:
    y = _read(args.grid)
    w = _read(args.weights)
    bounds = None
    if args.lower is not None or args.upper is not None:
        lo = _read(args.lower) if args.lower is not None else np.full(y.shape, -np.inf)
        hi = _read(args.upper) if args.upper is not None else np.full(y.shape, np.inf)
        bounds = BoxBounds(lo, hi)
    theta, state = dykstra_project(y, w, bounds, ProjectionOptions(rel_tol=args.rel_tol,
                                                                   max_sweeps=args.max_sweeps))
    _write_text(args.out, _grid_text(theta, args.format))
    _side_json(state.diagnostics(), args.diagnostics, args.out, ".diag.json")
    return EXIT_OK


def cmd_bench(args) -> int:
    _check_seed(args.seed)
    kind = bench.ExperimentKind(args.kind)
    sweep = None
    if args.sweep is not None:
        sweep = tuple(int(v) if float(v).is_integer() else v for v in args.sweep)
    elif kind is bench.ExperimentKind.RUNTIME and args.axis == "N":
        sweep = tuple(10**k for k in (range(2, 9) if args.paper_scale else range(2, 7)))
    cfg = bench.default_config(
        kind,
        paper_scale=args.paper_scale,
        sweep=sweep,
        replicates=args.replicates,
        seed_base=args.seed,
        estimators=tuple(args.estimators) if args.estimators else None,
        n=args.n,
        log_L=args.log_L,
        N=args.N,
        oracle_ns=tuple(args.oracle_ns) if args.oracle_ns else None,
        beta=args.beta,
        C=args.C,
        runtime_axis=args.axis,
        regression_range=tuple(args.range) if args.range else None,
        inner_tol=args.inner_tol,
        outer_tol=args.outer_tol,
        max_inner=args.max_inner,
        max_outer=args.max_outer,
        threads=args.threads,
    )
    records = bench.run_experiment(cfg)
    text = bench.emit(records, args.format, None, cfg)
    _write_text(args.out, text)
    metric = records[0].metric if records else None
    for est in cfg.estimators:
        try:
            r = bench.regress(records, est, metric, cfg.fit_range())
        except MTP2Error:
            continue
        sys.stderr.write(f"{est}: log-log slope {r.slope:.3f} over {r.fit_range} "
                         f"(residual rms {r.residual_rms:.3g})\n")
    if args.heatmaps:
        out = Path(args.heatmaps)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create {out}: {exc.strerror or exc}") from exc
        for name, grid in bench.density_heatmaps(seed=args.seed).items():
            try:
                write_grid_csv(out / f"{name}.csv", grid)
            except OSError as exc:
                raise OSError(f"cannot write {out / name}.csv: {exc.strerror or exc}") from exc
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "fit-grid": cmd_fit_grid,
    "fit-density": cmd_fit_density,
    "project": cmd_project,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return COMMANDS[args.command](args)
    except OSError as exc:
        print(f"mtp2: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        # MTP2Error derives from ValueError
        print(f"mtp2: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
