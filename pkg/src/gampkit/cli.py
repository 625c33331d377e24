"""Command line interface: ``gampkit {run,verify,compare,gen,rerun}``.

Exit codes
----------
0  converged / verification passed
1  bad flags, malformed input, unmet solver precondition, variant mismatch
2  run stopped at the iteration limit
3  run diverged
4  verification failed
"""

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .baselines import EXACT, INEXACT
from .errors import GampkitError
from .gamp import MAX_SUM, SUM_PRODUCT
from .harness import (
    ALGOS, COMPARE_COLUMNS, ExperimentResult, SolverParams, compare_solvers, format_table,
    load_problem_source, run_solver, spec_hash, versions,
)
from .io import FORMAT_VERSION, canonical_json, load_state, save_problem, state_to_dict, write_trace_csv
from .variational import check_approx_diagonals, check_maxsum_fixed_point, check_sumproduct_fixed_point

EXIT_OK, EXIT_USAGE, EXIT_MAX_ITERS, EXIT_DIVERGED, EXIT_VERIFY_FAILED = 0, 1, 2, 3, 4
RUN_EXIT = {"converged": EXIT_OK, "max_iters": EXIT_MAX_ITERS, "diverged": EXIT_DIVERGED}


class _Parser(argparse.ArgumentParser):
    """argparse with exit status 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _add_solver_flags(p, damping_default):
    p.add_argument("--damping", type=float, default=damping_default, help="GAMP damping in (0, 1]")
    p.add_argument("--alpha", type=_positive_float, default=1.0, help="ADMM step size")
    p.add_argument("--c", type=_positive_float, default=None, help="majorization constant (ISTA, inexact ADMM)")
    p.add_argument("--theta", type=float, default=1.0, help="dual interpolation for inexact ADMM")
    p.add_argument("--x-update", choices=("exact", "inexact"), default="exact", help="ADMM x-update")
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--tol", type=_positive_float, default=1e-10)
    p.add_argument("--seed", type=int, default=None, help="override the seed of a problem spec")


def build_parser():
    parser = _Parser(prog="gampkit", description="GAMP solvers, baselines and fixed-point verification.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one solver and write state, trace and manifest")
    p.add_argument("--problem", required=True, help="problem/spec JSON path or inline JSON")
    p.add_argument("--algo", required=True, choices=ALGOS)
    _add_solver_flags(p, 1.0)
    p.add_argument("--trace-every", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify", help="check a saved state against a fixed-point theorem")
    p.add_argument("--state", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument("--theorem", type=int, choices=(1, 2), required=True)
    p.add_argument("--tol", type=_positive_float, default=1e-6)
    p.add_argument("--fd-tol", type=_positive_float, default=1e-4, help="finite-difference tolerance (--theorem 2)")
    p.add_argument("--diagonals", action="store_true", help="also check the approximate diagonals (--theorem 1)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="report JSON path (default: report.json next to the state)")

    p = sub.add_parser("compare", help="run several solvers on one problem and tabulate")
    p.add_argument("--problem", required=True)
    p.add_argument("--algos", default=",".join(ALGOS), help="comma-separated subset of " + ",".join(ALGOS))
    _add_solver_flags(p, 0.9)
    p.add_argument("--out", default=None, help="directory for compare.csv and compare.txt")

    p = sub.add_parser("gen", help="materialize a problem spec into a problem JSON")
    p.add_argument("--spec", required=True, help="spec JSON path or inline JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="problem JSON path")
    return parser


def _params(args):
    return SolverParams(
        damping=args.damping, alpha=args.alpha, c=args.c, theta=args.theta,
        x_update=EXACT if args.x_update == "exact" else INEXACT,
        max_iters=args.max_iter, tol=args.tol, trace_every=getattr(args, "trace_every", 1),
    )


def _execute_run(problem, descriptor, algo, params, out, args_record):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    run = run_solver(problem, algo, params)
    state_path, trace_path = out / "state.json", out / "trace.csv"
    (state_path).write_text(canonical_json(state_to_dict(run.state)) + "\n")
    write_trace_csv(run.trace, trace_path)
    result = ExperimentResult(
        spec_hash=spec_hash(descriptor), solver=algo, state={"path": state_path.name},
        trace_path=trace_path.name, wall_time=run.wall_time, status=run.status, iterations=run.iterations,
    )
    manifest = {
        "format_version": FORMAT_VERSION,
        "command": "run",
        "args": args_record,
        "params": asdict(params),
        "input": descriptor,
        "result": asdict(result),
        "versions": versions(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"{algo}: {run.status} after {run.iterations} iterations, objective {problem.objective(run.state.x):.12g}")
    print(f"wrote {state_path}, {trace_path}, {out / 'manifest.json'}")
    return RUN_EXIT[run.status]


def cmd_run(args):
    problem, _, descriptor = load_problem_source(args.problem, seed=args.seed)
    record = {"problem": args.problem, "algo": args.algo, "seed": args.seed}
    return _execute_run(problem, descriptor, args.algo, _params(args), args.out, record)


def cmd_rerun(args):
    manifest = json.loads(Path(args.manifest).read_text())
    if manifest.get("format_version") != FORMAT_VERSION or manifest.get("command") != "run":
        raise GampkitError("not a run manifest")
    problem, _, descriptor = load_problem_source(json.dumps(next(iter(manifest["input"].values()))))
    params = SolverParams(**manifest["params"])
    return _execute_run(problem, descriptor, manifest["result"]["solver"], params, args.out, manifest["args"])


def cmd_verify(args):
    problem, _, _ = load_problem_source(args.problem, seed=args.seed)
    state = load_state(args.state)
    want = MAX_SUM if args.theorem == 1 else SUM_PRODUCT
    if state.variant != want:
        print(f"error: theorem {args.theorem} needs a {want} state, got {state.variant}", file=sys.stderr)
        return EXIT_USAGE
    if state.x.shape != (problem.n,) or state.z.shape != (problem.m,):
        print("error: state dimensions do not match the problem", file=sys.stderr)
        return EXIT_USAGE
    if args.theorem == 1:
        report = check_maxsum_fixed_point(problem, state, args.tol)
        if args.diagonals:
            diag = check_approx_diagonals(problem, state, args.tol)
            report.diag_residual_x = diag.diag_residual_x
            report.diag_residual_z = diag.diag_residual_z
            report.dropped_components = diag.dropped_components
            report.worst.update(diag.worst)
            report.finalize()
    else:
        report = check_sumproduct_fixed_point(problem, state, args.tol, args.fd_tol)
    out = Path(args.out) if args.out else Path(args.state).with_name("report.json")
    out.write_text(report.to_json() + "\n")
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


def cmd_compare(args):
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    bad = [a for a in algos if a not in ALGOS]
    if bad or not algos:
        print(f"error: unknown algorithms {bad}; choose from {','.join(ALGOS)}", file=sys.stderr)
        return EXIT_USAGE
    problem, _, _ = load_problem_source(args.problem, seed=args.seed)
    rows = compare_solvers(problem, algos, _params(args))
    table = format_table(rows)
    print(table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "compare.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COMPARE_COLUMNS)
            for r in rows:
                w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in COMPARE_COLUMNS])
        (out / "compare.txt").write_text(table + "\n")
    return EXIT_OK


def cmd_gen(args):
    problem, truth, descriptor = load_problem_source(args.spec, seed=args.seed)
    doc = save_problem(problem, args.out, truth)
    print(f"wrote {args.out} (m={problem.m}, n={problem.n}, sha256 {spec_hash(doc)[:16]})")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "rerun": cmd_rerun, "verify": cmd_verify, "compare": cmd_compare, "gen": cmd_gen}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (GampkitError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
