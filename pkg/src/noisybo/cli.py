"""
Command-line entry point.

Usage:
    noisybo run --problem HS7 --mode classic --mode relaxed --eps 0.1 --delta0 1e-7 --out runs/
    noisybo scenario SmallDelta0 --reps 10 --out runs/ --plot
    noisybo check

Exit codes: 0 all runs completed, 2 configuration error, 3 a run aborted with
EvaluationFault or PenaltyOverflow (``check`` returns 1 on a failed check).
"""

import argparse
import logging
import sys

import numpy as np

from .harness import ABORT_STATUSES, MODES, SCENARIOS, ConfigError, ExperimentSpec, run_experiment, scenario
from .noise import NoiseSpec

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_ABORT = 3


def _add_output_args(p):
    p.add_argument("--seed", type=int, default=0, help="base noise seed")
    p.add_argument("--reps", type=int, default=None, help="repetitions per mode")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory for traces and summary")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--plot", action="store_true", help="also render PNG figures into --out")


def _add_solver_args(p):
    p.add_argument("--delta0", type=float, default=None)
    p.add_argument("--pi0", type=float, default=None)
    p.add_argument("--pi1", type=float, default=None)
    p.add_argument("--zeta", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--nu0", type=float, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="noisybo", description="Noise-tolerant Byrd-Omojokun trust-region SQP")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an ad-hoc experiment")
    run.add_argument("--problem", required=True)
    run.add_argument("--mode", action="append", choices=MODES,
                     help="repeatable; defaults to all three")
    run.add_argument("--eps", type=float, default=0.0, help="noise level for f, c, g and A")
    for ch in ("f", "c", "g", "a", "w"):
        run.add_argument(f"--eps-{ch}", type=float, default=None)
    run.add_argument("--dist", choices=("uniform", "gaussian"), default="uniform")
    _add_solver_args(run)
    _add_output_args(run)

    scen = sub.add_parser("scenario", help="run a preset experiment")
    scen.add_argument("name", help=f"one of {', '.join(SCENARIOS)}")
    _add_solver_args(scen)
    _add_output_args(scen)

    check = sub.add_parser("check", help="derivative and invariant checks over the built-in problems")
    check.add_argument("--seeds", type=int, default=3)
    check.add_argument("--max-iters", type=int, default=200)
    return parser


def _solver_overrides(args):
    names = {"delta0": "delta0", "pi0": "pi0", "pi1": "pi1", "zeta": "zeta", "tau": "tau",
             "nu0": "nu_init", "max_iters": "max_iter"}
    return {dst: getattr(args, src) for src, dst in names.items() if getattr(args, src, None) is not None}


def _spec_from_run(args):
    def pick(name):
        value = getattr(args, f"eps_{name}")
        return args.eps if value is None else value

    noise = NoiseSpec(pick("f"), pick("c"), pick("g"), pick("a"),
                      0.0 if args.eps_w is None else args.eps_w, args.dist, args.seed)
    return ExperimentSpec(
        problem=args.problem, noise=noise, solver=_solver_overrides(args),
        modes=tuple(args.mode) if args.mode else MODES,
        repetitions=1 if args.reps is None else args.reps,
        out=args.out, fmt=args.format, plot=args.plot,
    )


def _spec_from_scenario(args):
    spec = scenario(args.name, repetitions=args.reps, seed=args.seed)
    spec.solver.update(_solver_overrides(args))
    spec.out, spec.fmt, spec.plot = args.out, args.format, args.plot
    return spec


def _print_summaries(results, stream):
    cols = ("mode", "rep", "status", "iterations", "f_true", "feas_true", "opt_true", "min_delta", "nu")
    print(" ".join(f"{c:>12}" for c in cols), file=stream)
    for res in results:
        s = res.summary
        vals = []
        for c in cols:
            v = getattr(s, c)
            vals.append(f"{v:>12.4e}" if isinstance(v, float) else f"{v!s:>12}")
        print(" ".join(vals), file=stream)


def _run_checks(args, stream):
    from .invariants import check_trace
    from .noise import NoisyOracle
    from .problems import builtin_names, builtin_problem, check_derivatives
    from .solver import SolverConfig, run_solver

    failed = 0
    names = [n for n in builtin_names() if n != "QUAD_LIN"] + ["QUAD_LIN(3)"]
    for name in names:
        problem = builtin_problem(name)
        rng = np.random.default_rng(0)
        points = [problem.x0] + [problem.x0 + 0.1 * rng.standard_normal(problem.n) for _ in range(10)]
        derr = [rep for rep in (check_derivatives(problem, x) for x in points) if not rep.ok]
        print(f"{'PASS' if not derr else 'FAIL'} derivatives {name}", file=stream)
        failed += bool(derr)
        for seed in range(args.seeds):
            for mode, eps in (("classic", 0.0), ("relaxed", 0.1)):
                cfg = SolverConfig(mode=mode, eps_f=eps, eps_c=eps, max_iter=args.max_iters)
                oracle = NoisyOracle(problem, NoiseSpec.uniform(eps, seed=seed))
                _, trace, status = run_solver(oracle, cfg)
                bad = check_trace(trace, cfg)
                print(f"{'PASS' if not bad else 'FAIL'} invariants {name} {mode} eps={eps} seed={seed} "
                      f"({len(trace)} iterations, {status})", file=stream)
                for line in bad[:5]:
                    print(f"    {line}", file=stream)
                failed += bool(bad)
    return EXIT_OK if not failed else EXIT_CHECK_FAILED


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "check":
        return _run_checks(args, sys.stdout)
    try:
        spec = _spec_from_run(args) if args.command == "run" else _spec_from_scenario(args)
        results = run_experiment(spec)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _print_summaries(results, sys.stdout)
    if any(r.summary.status in ABORT_STATUSES for r in results):
        return EXIT_ABORT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
