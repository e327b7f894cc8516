"""Command-line front end: forward solves, estimation, simulation, figure data.

Exit status is 0 on success, 1 for usage or input errors and 2 when a
computation fails numerically.  Output files are written to a temporary
name and renamed into place, so a failed run leaves nothing behind.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from .drift_dsl import DriftEvalError, DriftParseError, free_parameters, parse_drift
from .estimator import (
    EstimationError,
    EstimationProblem,
    FreeParameter,
    ObservationSet,
    estimate_parameters,
)
from .linear import ConvergenceError, SingularSystemError
from .mc_oracle import SimConfig, empirical_statistics
from .nonlocal_solver import (
    EP,
    MET,
    SCHEMES,
    AssemblyError,
    Domain,
    Profile,
    SystemParams,
    TargetSet,
    escape_probability,
    mean_exit_time,
)

__all__ = ["run_cli", "main", "read_observations", "write_profile", "build_parser"]

log = logging.getLogger("levy_exit")

KINDS = {"met": MET, "ep": EP}
NUMERICAL_ERRORS = (
    AssemblyError, SingularSystemError, ConvergenceError, EstimationError,
    DriftEvalError, FloatingPointError, np.linalg.LinAlgError,
)


class UsageError(Exception):
    """Bad flags or unreadable input; maps to exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _finite(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number: {text!r}") from None
    if not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"number must be finite: {text!r}")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer: {text!r}")
    return value


def _assignment(text: str) -> tuple[str, float]:
    name, sep, value = text.partition("=")
    if not sep or not name.strip():
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}")
    return name.strip(), _finite(value)


def _free(text: str) -> FreeParameter:
    try:
        return FreeParameter.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _target(text: str) -> TargetSet:
    try:
        return TargetSet.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# ---------------------------------------------------------------- file I/O

def _atomic_write(path, write) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_profile(profile: Profile, path) -> None:
    """CSV ``x,value[,stderr]`` in ascending ``x`` at full double precision."""
    order = np.argsort(profile.xs, kind="stable")
    has_err = profile.stderr is not None

    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "value", "stderr"] if has_err else ["x", "value"])
        for i in order:
            row = [_fmt(profile.xs[i]), _fmt(profile.values[i])]
            if has_err:
                row.append(_fmt(profile.stderr[i]))
            w.writerow(row)

    try:
        _atomic_write(path, write)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_table(rows, path) -> None:
    """Two-column ``name,value`` CSV."""
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "value"])
        w.writerows(rows)

    try:
        _atomic_write(path, write)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _read_rows(path):
    try:
        with open(path, newline="") as fh:
            return list(enumerate(csv.reader(fh), start=1))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None


def read_observations(path, kind: str = MET, target: TargetSet | None = None) -> ObservationSet:
    """Load an ``x,value`` CSV (extra columns such as ``stderr`` are ignored).

    Rows are sorted by ``x``; duplicates and malformed rows are rejected with
    their line number.  The observation kind comes from the caller.
    """
    rows = [(n, r) for n, r in _read_rows(path) if r and any(c.strip() for c in r)]
    if not rows:
        raise UsageError(f"{path}: empty file, expected header 'x,value'")
    n, header = rows[0]
    if [c.strip() for c in header[:2]] != ["x", "value"]:
        raise UsageError(f"{path}:{n}: expected header 'x,value', got {','.join(header)!r}")
    xs, values = [], []
    for n, row in rows[1:]:
        if len(row) < 2:
            raise UsageError(f"{path}:{n}: expected two columns, got {','.join(row)!r}")
        try:
            x, v = float(row[0]), float(row[1])
        except ValueError:
            raise UsageError(f"{path}:{n}: malformed number in {','.join(row)!r}") from None
        if not (math.isfinite(x) and math.isfinite(v)):
            raise UsageError(f"{path}:{n}: non-finite value in {','.join(row)!r}")
        if kind == EP and not 0.0 <= v <= 1.0:
            raise UsageError(f"{path}:{n}: escape probability {row[1].strip()} outside [0, 1]")
        xs.append(x)
        values.append(v)
    if not xs:
        raise UsageError(f"{path}: no observations after the header")
    xs, values = np.array(xs), np.array(values)
    order = np.argsort(xs, kind="stable")
    xs, values = xs[order], values[order]
    dup = np.flatnonzero(np.diff(xs) == 0)
    if dup.size:
        raise UsageError(f"{path}: duplicate observation location x={xs[dup[0]]!r}")
    try:
        return ObservationSet(xs, values, kind, target)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def read_points(path) -> np.ndarray:
    """Starting points, one per line; blank lines, ``#`` comments and an ``x`` header skipped."""
    out = []
    for n, row in _read_rows(path):
        text = ",".join(row).split("#", 1)[0].strip()
        if not text or (not out and text == "x"):
            continue
        try:
            out.append(float(text.split(",")[0]))
        except ValueError:
            raise UsageError(f"{path}:{n}: malformed number {text!r}") from None
    if not out:
        raise UsageError(f"{path}: no starting points")
    return np.array(out)


def infer_domain(xs: np.ndarray) -> Domain:
    """Domain of a uniform solver grid: one spacing beyond each end node."""
    if xs.size < 2:
        raise UsageError("cannot infer the domain from fewer than two observations; pass --domain")
    steps = np.diff(xs)
    h = steps.mean()
    if np.max(np.abs(steps - h)) > 1e-9 * max(1.0, np.max(np.abs(xs))):
        raise UsageError("observations are not uniformly spaced; pass --domain A B")
    return Domain(float(xs[0] - h), float(xs[-1] + h))


# ---------------------------------------------------------------- parser

def _add_model(p, *, grid_required=True):
    p.add_argument("--drift", required=True, help="drift expression in x, e.g. 'x - beta*x^3'")
    p.add_argument("--alpha", type=_finite, required=True)
    p.add_argument("--epsilon", type=_finite, default=1.0)
    p.add_argument("--d", type=_finite, default=0.0, help="Gaussian diffusion coefficient")
    p.add_argument("--param", type=_assignment, action="append", default=[],
                   metavar="NAME=VALUE", help="drift parameter value (repeatable)")
    p.add_argument("--domain", type=_finite, nargs=2, metavar=("A", "B"), required=True)


def _add_solver(p):
    p.add_argument("--scheme", choices=SCHEMES, default="simplified")
    p.add_argument("--method", choices=("lu", "gmres"), default="lu")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="levy-exit", allow_abbrev=False,
                     description="Mean exit times and escape probabilities for "
                                 "alpha-stable driven SDEs, with parameter estimation.")
    common = _Parser(add_help=False, allow_abbrev=False)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS,
                        help="report progress on standard error (repeat for more)")
    common.add_argument("--threads", type=_positive_int, default=argparse.SUPPRESS,
                        help="worker threads (default: number of CPUs)")
    for action in common._actions:
        parser._add_action(action)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    p = sub.add_parser("solve-met", help="mean exit time on the solver grid", allow_abbrev=False)
    _add_model(p)
    p.add_argument("--grid", type=_positive_int, required=True, metavar="J")
    _add_solver(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("solve-ep", help="escape probability on the solver grid", allow_abbrev=False)
    _add_model(p)
    p.add_argument("--target", type=_target, required=True, help="left|right|both|LO:HI")
    p.add_argument("--grid", type=_positive_int, required=True, metavar="J")
    _add_solver(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("estimate", help="fit parameters to observations", allow_abbrev=False)
    p.add_argument("--obs", required=True)
    p.add_argument("--kind", choices=sorted(KINDS), required=True)
    p.add_argument("--drift", required=True)
    p.add_argument("--free", type=_free, action="append", required=True, metavar="NAME:LO:HI")
    p.add_argument("--fixed", type=_assignment, action="append", default=[], metavar="NAME=VALUE")
    p.add_argument("--grid", type=_positive_int, default=100, metavar="J")
    p.add_argument("--domain", type=_finite, nargs=2, metavar=("A", "B"),
                   help="defaults to one grid spacing beyond the outermost observations")
    p.add_argument("--target", type=_target, help="required for --kind ep")
    _add_solver(p)
    p.add_argument("--xtol", type=_finite, default=1e-4)
    p.add_argument("--multistart", type=_positive_int, default=3)
    p.add_argument("--max-evals", type=_positive_int, default=200)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo exit statistics", allow_abbrev=False)
    _add_model(p)
    start = p.add_mutually_exclusive_group(required=True)
    start.add_argument("--x0-list", metavar="FILE")
    start.add_argument("--x0", type=_finite, action="append")
    p.add_argument("--paths", type=_positive_int, default=10_000)
    p.add_argument("--dt", type=_finite, default=1e-4)
    p.add_argument("--max-time", type=_finite, default=100.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target", type=_target, help="report landing frequency instead of exit time")
    p.add_argument("--out", required=True)

    p = sub.add_parser("figures", help="data series behind the estimation figures", allow_abbrev=False)
    p.add_argument("--which", type=int, choices=(1, 2, 3, 4), required=True)
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--obs-grid", type=_positive_int, default=400, metavar="J")
    p.add_argument("--est-grid", type=_positive_int, default=200, metavar="J")
    return parser


def _single_valued(parser: argparse.ArgumentParser) -> set[str]:
    names = set()
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sp in action.choices.values():
                names |= _single_valued(sp)
        elif action.nargs is None and action.option_strings:
            names.update(s for s in action.option_strings if s.startswith("--"))
    return names


def _glue_values(argv: list[str], options: set[str]) -> list[str]:
    # argparse would read a value such as "-x" as a flag; bind it explicitly
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok == "--":
            out.extend(argv[i:])
            break
        if tok in options and i + 1 < len(argv):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


# ---------------------------------------------------------------- commands

def _params(args, alpha=None) -> SystemParams:
    env = dict(args.param)
    expr = parse_drift(args.drift)
    missing = [n for n in free_parameters(expr) if n not in env]
    if missing:
        raise UsageError(f"drift parameter(s) {', '.join(missing)} need --param NAME=VALUE")
    extra = [n for n in env if n not in free_parameters(expr)]
    if extra:
        raise UsageError(f"--param {extra[0]} does not appear in the drift {args.drift!r}")
    return SystemParams(args.alpha if alpha is None else alpha, args.epsilon, args.d, env)


def _domain(pair) -> Domain:
    return Domain(float(pair[0]), float(pair[1]))


def _cmd_solve(args) -> None:
    params, domain = _params(args), _domain(args.domain)
    if args.grid < 2:
        raise UsageError("--grid must be at least 2")
    if args.command == "solve-met":
        prof = mean_exit_time(params, args.drift, domain, args.grid, args.scheme, args.method)
    else:
        prof = escape_probability(params, args.drift, domain, args.target, args.grid,
                                  args.scheme, args.method)
    write_profile(prof, args.out)
    log.info("wrote %d rows to %s", len(prof), args.out)


def _cmd_estimate(args) -> None:
    kind = KINDS[args.kind]
    if kind == EP and args.target is None:
        raise UsageError("--kind ep requires --target")
    if args.grid < 2:
        raise UsageError("--grid must be at least 2")
    obs = read_observations(args.obs, kind, args.target if kind == EP else None)
    domain = _domain(args.domain) if args.domain else infer_domain(obs.xs)
    log.info("domain (%g, %g), %d observations", domain.a, domain.b, obs.xs.size)
    problem = EstimationProblem(
        obs, args.drift, domain, list(args.free), dict(args.fixed), J=args.grid,
        scheme=args.scheme, method=args.method, xtol=args.xtol,
        multistart=args.multistart, max_evaluations=args.max_evals, threads=args.threads,
    )
    result = estimate_parameters(problem)
    rows = [(k, _fmt(v)) for k, v in result.best.items()]
    rows += [("objective", _fmt(result.objective_value)),
             ("evaluations", str(result.evaluations)),
             ("failed_evaluations", str(len(result.failures)))]
    write_table(rows, args.out)
    for name, value in result.best.items():
        log.info("%s = %.10g", name, value)


def _cmd_simulate(args) -> None:
    params, domain = _params(args), _domain(args.domain)
    xs = read_points(args.x0_list) if args.x0_list else np.array(args.x0)
    if not np.all(domain.contains(xs)):
        raise UsageError(f"starting points must lie inside ({domain.a:g}, {domain.b:g})")
    xs = np.unique(xs)
    config = SimConfig(dt=args.dt, max_time=args.max_time, n_paths=args.paths, seed=args.seed)
    prof = empirical_statistics(params, args.drift, domain, xs, args.target, config,
                                threads=args.threads)
    write_profile(prof, args.out)


def _cmd_figures(args) -> None:
    from .figures import write_figure

    results = write_figure(args.which, args.out, args.obs_grid, args.est_grid,
                           threads=args.threads)
    for name, res in results.items():
        log.info("%s: %s", name, ", ".join(f"{k}={v:.6g}" for k, v in res.best.items()))


COMMANDS = {
    "solve-met": _cmd_solve,
    "solve-ep": _cmd_solve,
    "estimate": _cmd_estimate,
    "simulate": _cmd_simulate,
    "figures": _cmd_figures,
}


def run_cli(argv=None) -> int:
    """Run one subcommand; returns the process exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_glue_values(argv, _single_valued(parser)))
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    args.verbose = getattr(args, "verbose", 0)
    args.threads = getattr(args, "threads", os.cpu_count() or 1)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"levy-exit {args.command}: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as exc:
        print(f"levy-exit {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (DriftParseError, ValueError, OSError) as exc:
        print(f"levy-exit {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_cli())
