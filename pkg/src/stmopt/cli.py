"""Command-line front end: ``stm run | sample-size | concentration | check``.

A run is described by a JSON file::

    {"problem": {"name": "cosine_sum", "params": {"n": 500, "d": 10}},
     "config": {"eps": [0.01, 0.1, 0.5], "sampling": "full"},
     "out": "runs/cosine"}

Flags override the file.  Outputs are written atomically and contain no
timestamps, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .checks import ToleranceError, run_checks, tolerance_scale
from .concentration import (
    CSV_COLUMNS as TAIL_COLUMNS,
    bound_crossover,
    gaussian_population,
    rank1_population,
    simulate_tail,
    matching_tail_bound,
)
from .driver import CSV_COLUMNS as RUN_COLUMNS, StmConfig, run
from .problems import make_problem
from .sampling import DEFAULT_KAPPAS, plan_with_replacement, plan_without_replacement

log = logging.getLogger("stmopt")

CSV_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_ITERS = 2
EXIT_FAILED = 3


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1; exit 2 is reserved for runs that hit max_iters
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        # JSON has no inf/nan
        return obj if math.isfinite(obj) else str(obj)
    return obj


def dumps(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _csv_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_csv_cell(v) for v in row])
    return buf.getvalue()


def write_atomic(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=folder)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class SpecError(ValueError):
    """The run description is malformed."""


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(StmConfig)}


def load_spec(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            spec = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(spec, dict):
        raise SpecError(f"{path}: top level must be an object")
    return spec


def build_run(spec, args):
    """Merge file and flags into ``(problem_name, problem_params, StmConfig, out_dir)``."""
    unknown = set(spec) - {"problem", "config", "out"}
    if unknown:
        raise SpecError(f"unknown top-level field(s): {', '.join(sorted(unknown))}")
    prob = spec.get("problem", {})
    if isinstance(prob, str):
        prob = {"name": prob}
    name = args.problem or prob.get("name")
    if not name:
        raise SpecError("field 'problem.name' is required")
    params = dict(prob.get("params", {}))
    for key, value in (args.param or []):
        params[key] = json.loads(value) if value[:1] in "-0123456789[{tfn" else value
    raw = dict(spec.get("config", {}))
    bad = set(raw) - _CONFIG_FIELDS
    if bad:
        raise SpecError(f"unknown config field(s): {', '.join(sorted(bad))}")
    for flag, key in (("seed", "seed"), ("mode", "mode"), ("scheme", "sampling"),
                      ("max_iters", "max_iters")):
        value = getattr(args, flag)
        if value is not None:
            raw[key] = value
    for key in ("eps", "kappas", "sample_sizes"):
        if key in raw and raw[key] is not None:
            raw[key] = tuple(raw[key])
    try:
        config = StmConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"config: {exc}") from None
    out = args.out or spec.get("out")
    if not out:
        raise SpecError("field 'out' (or --out) is required")
    return name, params, config, out


def cmd_run(args):
    spec = load_spec(args.config)
    name, params, config, out = build_run(spec, args)
    try:
        problem = make_problem(name, **params)
    except (TypeError, ValueError, KeyError) as exc:
        raise SpecError(f"problem: {exc}") from None
    report = run(problem, config, callback=lambda r: log.info(
        "k=%d f=%.6g sigma=%.3g rho=%.3g %s", r.k, r.f, r.sigma, r.rho, r.step_class.value))
    summary = {
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "spec": {"problem": {"name": name, "params": params}, "config": config.to_dict(), "out": out},
        "report": report.to_dict(),
    }
    write_atomic(os.path.join(out, "iterations.csv"),
                 csv_text(RUN_COLUMNS, (r.row() for r in report.records)))
    write_atomic(os.path.join(out, "summary.json"), dumps(summary))
    print(f"{report.status} after {report.iterations} iterations; chi = "
          + ", ".join(f"{c:.3g}" for c in report.chi))
    return EXIT_OK if report.converged else EXIT_MAX_ITERS


def cmd_sample_size(args):
    kappas = tuple(args.kappas)
    sigmas = tuple(args.sigmas)
    if args.scheme == "with":
        plan = plan_with_replacement(args.eps, args.delta, kappas, sigmas, args.d)
        if args.N is not None:
            plan = plan.clamped(args.N)
    else:
        if args.N is None:
            raise SpecError("--N is required for sampling without replacement")
        plan = plan_without_replacement(args.eps, args.delta, kappas, sigmas, args.d, args.N)
    sys.stdout.write(dumps(plan.to_dict()))
    return EXIT_OK


def cmd_concentration(args):
    if args.trials < 1000:
        raise SpecError("--trials must be at least 1000")
    make = rank1_population if args.population == "rank1" else gaussian_population
    pop = make(args.N, args.d, k=args.order, seed=args.seed)
    scheme = args.scheme or "without"
    est = simulate_tail(pop, args.n, scheme, trials=args.trials, seed=args.seed,
                        grid_oracle=args.grid_oracle, normalization=args.normalization)
    sound = est.sound()
    crossover = bound_crossover(matching_tail_bound(pop, args.n, scheme))
    summary = {
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "population": {"recipe": pop.recipe, "N": pop.N, "d": pop.dim, "order": pop.order,
                       "sigma": pop.sigma, "seed": pop.seed},
        "n": args.n,
        "scheme": scheme,
        "normalization": est.normalization,
        "trials": args.trials,
        "seed": args.seed,
        "crossover": crossover,
        "mean_deviation": est.mean_deviation,
        "mean_deviation_of_mean": est.mean_normalized,
        "max_informative_freq": float(est.freq[est.informative].max()) if est.informative.any() else 0.0,
        "sound": sound,
    }
    write_atomic(os.path.join(args.out, "tail.csv"), csv_text(TAIL_COLUMNS, est.rows()))
    write_atomic(os.path.join(args.out, "tail.json"), dumps(summary))
    print(f"{'sound' if sound else 'UNSOUND'}: n={args.n} {scheme} replacement, "
          f"{int(est.informative.sum())} informative grid points")
    return EXIT_OK if sound else EXIT_FAILED


def cmd_check(args):
    try:
        scale = tolerance_scale()
    except ToleranceError as exc:
        sys.stdout.write(dumps({"passed": False, "error": str(exc), "checks": []}))
        return EXIT_FAILED
    try:
        results = run_checks(args.names, seed=args.seed or 0, scale=scale)
    except KeyError as exc:
        raise SpecError(exc.args[0]) from None
    passed = all(r.passed for r in results)
    text = dumps({"passed": passed, "tolerance_scale": scale,
                  "checks": [r.to_dict() for r in results]})
    if args.out:
        write_atomic(os.path.join(args.out, "checks.json"), text)
    sys.stdout.write(text)
    return EXIT_OK if passed else EXIT_FAILED


def _key_value(text):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key, value


def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser():
    parser = _Parser(prog="stm", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="minimize a test problem")
    p.add_argument("--config", help="JSON run description")
    p.add_argument("--problem", help="problem name (overrides the file)")
    p.add_argument("--param", action="append", type=_key_value, metavar="KEY=VALUE",
                   help="problem parameter, repeatable")
    p.add_argument("--seed", type=_seed)
    p.add_argument("--out", help="output directory")
    p.add_argument("--mode", choices=("verify", "production"))
    p.add_argument("--scheme", choices=("with", "without", "full"))
    p.add_argument("--max-iters", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sample-size", help="print the sample sizes for given accuracy")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--kappas", type=float, nargs=3, default=DEFAULT_KAPPAS)
    p.add_argument("--sigmas", type=float, nargs=3, default=(1.0, 1.0, 1.0),
                   help="ranges of the component gradients, Hessians and third derivatives")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--N", type=int)
    p.add_argument("--scheme", choices=("with", "without"), default="without")
    p.set_defaults(func=cmd_sample_size)

    p = sub.add_parser("concentration", help="Monte Carlo check of a tensor tail bound")
    p.add_argument("--population", choices=("rank1", "gaussian"), default="rank1")
    p.add_argument("--N", type=int, default=2000)
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--order", type=int, choices=(1, 2, 3), default=3)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--scheme", choices=("with", "without"))
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--normalization", choices=("sum", "mean"))
    p.add_argument("--grid-oracle", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_concentration)

    p = sub.add_parser("check", help="run the invariant suite")
    p.add_argument("names", nargs="*", help="checks to run (default: all)")
    p.add_argument("--seed", type=_seed)
    p.add_argument("--out")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SpecError, ValueError, OSError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"stm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
