"""``mgsolve`` command line: train, solve, bench, gradcheck, gen-coef.

Exit codes: 0 success, 2 configuration error, 3 training failure,
4 solve divergence, 5 gradient check failure.
"""
import argparse
import csv
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import _backend
from . import tensor as T
from .autodiff import OPS, Op, grad_check
from .classical_mg import gmg_levels_for_grid, gmg_setup, stationary_solve, v_cycle
from .datasets import parse_distribution, sample_coefficients, write_pgm
from .discretization import ProblemSpec, apply_operator
from .learned import LearnedSolver, init_weights, level_for_grid
from .training import TrainConfig, TrainingDiverged, residual_loss, sample_batch, train, write_history
from .weights_io import WeightFileError, load_weights, save_weights

EXIT_OK, EXIT_CONFIG, EXIT_TRAIN, EXIT_DIVERGED, EXIT_GRADCHECK = 0, 2, 3, 4, 5

DEFAULT_TOL = {"f64": 1e-8, "f32": 1e-4}
DEFAULT_RUNS = 10
DEFAULT_MAX_ITERS = 500

# config-file key -> TrainConfig field
CONFIG_KEYS = {
    "epochs": "epochs",
    "num": "batches_per_epoch",
    "lr": "lr",
    "step_size": "lr_step_epochs",
    "gamma": "lr_gamma",
    "size_step": "size_step",
    "size": "initial_size",
    "level": "initial_level",
    "batch_size": "initial_batch",
    "max_size": "max_size",
    "min_batch_size": "min_batch",
    "re_limit": "re_limit",
    "channels": "channels",
    "precision": "precision",
    "seed": "seed",
    "coef": "coef_distribution",
}

BENCH_COLUMNS = ("grid", "solver_name", "channels", "level", "precision", "mean_iterations",
                 "setup_seconds", "solve_seconds", "final_relative_residual", "seed",
                 "converged_runs", "error")

log = logging.getLogger("mgsolve")


class ConfigError(ValueError):
    pass


def parse_config(text, source="<config>"):
    """Parse flat ``key = value`` lines into a :class:`TrainConfig`."""
    types = {f: type(getattr(TrainConfig(), f)) for f in CONFIG_KEYS.values()}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        field = CONFIG_KEYS[key]
        try:
            values[field] = types[field](value)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {value!r}") from None
    try:
        return TrainConfig(**values)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def format_config(cfg):
    lines = [f"{key} = {getattr(cfg, field)}" for key, field in CONFIG_KEYS.items()]
    return "\n".join(lines) + "\n"


def _grid_arg(text):
    n = int(text)
    if n < 3 or (n + 1) & n:
        raise argparse.ArgumentTypeError(f"grid must be 2**k - 1 (>= 3), got {n}")
    return n


def _grids_arg(text):
    return [_grid_arg(t) for t in text.split(",") if t.strip()]


def _load(path):
    try:
        return load_weights(path)
    except FileNotFoundError:
        raise ConfigError(f"weight file not found: {path}") from None
    except WeightFileError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _draw_spec(dist, grid, rng, re_limit, precision):
    coef = sample_coefficients(dist, grid, 1, rng, re_limit, T.dtype_for(precision))
    return ProblemSpec(grid, coef[0], re_limit=re_limit)


def _make_solver(name, weights, spec):
    """(apply_b, level, setup_seconds) for one problem."""
    if name == "gmg":
        t0 = time.perf_counter()
        h = gmg_setup(spec, gmg_levels_for_grid(spec.grid_n))
        return (lambda r: v_cycle(h, 0, r)), h.levels, time.perf_counter() - t0
    solver = LearnedSolver(weights, spec)
    return solver, solver.level, solver.setup_seconds


# -- subcommands ---------------------------------------------------------------

def cmd_train(args):
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config(path.read_text(), str(path))
    if args.print_config:
        sys.stdout.write(format_config(cfg))
        return EXIT_OK
    try:
        result = train(cfg)
    except TrainingDiverged as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    save_weights(result.weights, args.weights)
    write_history(args.history, result.history)
    print(f"wrote {args.weights} and {args.history}")
    return EXIT_OK


def cmd_solve(args):
    weights = _load(args.weights) if args.solver == "learned" else None
    tol = args.tol if args.tol is not None else DEFAULT_TOL[args.precision]
    rng = np.random.default_rng(args.seed)
    spec = _draw_spec(parse_distribution(args.dist), args.grid, rng, args.re_limit, args.precision)
    apply_b, level, _ = _make_solver(args.solver, weights, spec)
    rhs = np.ones((1, args.grid, args.grid), dtype=spec.dtype)
    _, report = stationary_solve(lambda s: apply_operator(spec, s), apply_b, rhs, tol,
                                 args.max_iters)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(("iteration", "relative_residual"))
        for i, rel in enumerate(report.relative_residual_history):
            writer.writerow((i, repr(float(rel))))
    finally:
        if args.out:
            out.close()
    status = "converged" if report.converged else ("diverged" if report.diverged else "not converged")
    print(f"{args.solver} level {level}: {status} after {report.iterations} iterations",
          file=sys.stderr)
    return EXIT_DIVERGED if report.diverged else EXIT_OK


def bench_rows(weights, grids, solvers, runs, seed, precision, tol, re_limit, dist,
               max_iters=DEFAULT_MAX_ITERS):
    """Yield one result dict per grid and solver.

    Both solvers on a grid see the same ``runs`` coefficient draws, seeded
    with ``seed + grid_index``.
    """
    dist = parse_distribution(dist)
    for gi, grid in enumerate(grids):
        row_seed = seed + gi
        for name in solvers:
            row = dict.fromkeys(BENCH_COLUMNS, "")
            row.update(grid=grid, solver_name=name, precision=precision, seed=row_seed,
                       channels=weights.channels if name == "learned" else "")
            try:
                rng = np.random.default_rng(row_seed)
                iters, setup, solve, finals, converged = [], 0.0, 0.0, [], 0
                for _ in range(runs):
                    spec = _draw_spec(dist, grid, rng, re_limit, precision)
                    apply_b, level, setup_s = _make_solver(name, weights, spec)
                    rhs = np.ones((1, grid, grid), dtype=spec.dtype)
                    _, rep = stationary_solve(lambda s, sp=spec: apply_operator(sp, s), apply_b,
                                              rhs, tol, max_iters)
                    iters.append(rep.iterations)
                    setup += setup_s
                    solve += rep.solve_seconds
                    finals.append(rep.final_relative_residual)
                    converged += rep.converged
                row.update(level=level, mean_iterations=float(np.mean(iters)),
                           setup_seconds=setup / runs, solve_seconds=solve / runs,
                           final_relative_residual=float(np.max(finals)),
                           converged_runs=converged)
            except (MemoryError, ValueError, FloatingPointError) as exc:
                row.update(mean_iterations=math.nan, error=f"{type(exc).__name__}: {exc}")
            yield row


def cmd_bench(args):
    solvers = [s.strip() for s in args.solvers.split(",") if s.strip()]
    unknown = set(solvers) - {"gmg", "learned"}
    if unknown or not solvers:
        raise ConfigError(f"solvers must be a subset of gmg,learned; got {args.solvers!r}")
    weights = _load(args.weights) if "learned" in solvers else None
    tol = args.tol if args.tol is not None else DEFAULT_TOL[args.precision]
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        for row in bench_rows(weights, args.grids, solvers, args.runs, args.seed, args.precision,
                              tol, args.re_limit, args.dist, args.max_iters):
            writer.writerow(row)
            out.flush()
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def _corrupt_tanh_backward():
    # negative control: a wrong derivative must make the check fail
    op = OPS["tanh"]
    OPS["tanh"] = Op(op.forward, lambda g, v, out, a: (g * (1.0 - out * out) * 1.01,))
    return op


def run_gradcheck(channels=4, size=15, level=2, seed=0, eps=1e-6, tol=1e-5, batch=2):
    """Gradient check of the full training loss with random weights and data."""
    rng = np.random.default_rng(seed)
    weights = init_weights(channels, seed=seed)
    for name in weights.names():
        if name.endswith(".bias"):
            weights.params[name][:] = rng.uniform(-0.3, 0.3, channels)
    cfg = TrainConfig(channels=channels, initial_size=size)
    spec, rhs = sample_batch(cfg, size, batch, rng)
    return grad_check(lambda tape, w: residual_loss(tape, w, spec, rhs, level), weights,
                      eps=eps, tol=tol)


def cmd_gradcheck(args):
    if args.size > 15:
        raise ConfigError("gradcheck size must be at most 15")
    saved = _corrupt_tanh_backward() if args.corrupt_backward else None
    try:
        report = run_gradcheck(args.channels, args.size, args.level, args.seed, args.eps, args.tol)
    finally:
        if saved is not None:
            OPS["tanh"] = saved
    print(report)
    return EXIT_OK if report.passed else EXIT_GRADCHECK


def cmd_gen_coef(args):
    rng = np.random.default_rng(args.seed)
    coef = sample_coefficients(parse_distribution(args.dist), args.grid, 1, rng, args.re_limit)[0, 0]
    # log scale: coef 1 -> white, 1/re_limit -> black
    shade = 1.0 + np.log10(coef) / math.log10(args.re_limit)
    write_pgm(args.out, 255 * shade)
    print(f"wrote {args.out}")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="mgsolve", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser.add_argument("--backend", choices=("compiled", "python"),
                        help="kernel implementation (default: compiled when available)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train solver weights from a config file")
    p.add_argument("config")
    p.add_argument("--weights", default="weights.mgcn")
    p.add_argument("--history", default="history.csv")
    p.add_argument("--print-config", action="store_true",
                   help="print the effective configuration and exit")
    p.set_defaults(func=cmd_train)

    def problem_args(p):
        p.add_argument("--re-limit", type=float, default=1000.0)
        p.add_argument("--dist", default="white_noise", help="coefficient distribution")
        p.add_argument("--precision", choices=("f64", "f32"), default="f64")
        p.add_argument("--tol", type=float, help="default 1e-8 (f64) or 1e-4 (f32)")
        p.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="CSV path (default stdout)")

    p = sub.add_parser("solve", help="solve one random problem and print the residual history")
    p.add_argument("--weights")
    p.add_argument("--grid", type=_grid_arg, default=63)
    p.add_argument("--solver", choices=("learned", "gmg"), default="learned")
    problem_args(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="mean iteration counts over random problems")
    p.add_argument("--weights")
    p.add_argument("--grids", type=_grids_arg, default=[31, 63, 127])
    p.add_argument("--solvers", default="gmg,learned")
    p.add_argument("--runs", type=int, default=DEFAULT_RUNS)
    problem_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference check of the training gradient")
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--size", type=_grid_arg, default=15)
    p.add_argument("--level", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--corrupt-backward", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-coef", help="write a coefficient sample as a PGM image")
    p.add_argument("out")
    p.add_argument("--grid", type=_grid_arg, default=63)
    p.add_argument("--dist", default="white_noise")
    p.add_argument("--re-limit", type=float, default=1000.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_coef)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.backend:
        _backend.use(args.backend)
    if args.command in ("solve", "bench"):
        if getattr(args, "solver", "learned") == "learned" and args.command == "solve" \
                and not args.weights:
            parser.error("solve --solver learned needs --weights")
        if args.command == "bench" and "learned" in args.solvers and not args.weights:
            parser.error("bench with the learned solver needs --weights")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
