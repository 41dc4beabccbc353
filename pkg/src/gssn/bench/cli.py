"""Command-line driver: ``gssn solve ...``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..convergence import ConvergenceLog
from ..driver import SolverConfig, bas_gssn, fista_baseline, heuristic_multistart, pgm_baseline
from ..fbe import forward_backward
from .mmio import load_matrix_market, load_vector, save_vector
from .problems import RegressionProblem, gen_lasso, gen_tresca_toy

__all__ = ["build_parser", "cli_run", "main", "NNZ_THRESHOLD"]

NNZ_THRESHOLD = 1e-10
EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _q(text: str) -> float:
    q = float(text)
    if q not in (0.0, 0.5, 1.0):
        raise argparse.ArgumentTypeError("q must be 1, 0.5 or 0")
    return q


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gssn", description="Globalized SCD semismooth* Newton solver.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    s = sub.add_parser("solve", help="build a problem and solve it")
    s.add_argument("--problem", choices=("lasso", "tresca", "file"), default="lasso")
    s.add_argument("--matrix", type=Path, help="Matrix Market file for --problem file")
    s.add_argument("--rhs", type=Path, help="vector file for --problem file")
    s.add_argument("--q", type=_q, default=1.0, help="regularizer exponent: 1, 0.5 or 0")
    s.add_argument("--lambda-c", type=float, default=1e-3, dest="lambda_c",
                   help="mu = lambda_c * ||A^T b||_inf")
    s.add_argument("--mu", type=float, help="regularization weight (overrides --lambda-c)")
    s.add_argument("--solver", choices=("gssn", "pgm", "fista"), default="gssn")
    s.add_argument("--direction", choices=("exact", "cg"), default="cg")
    s.add_argument("--max-iter", type=int, default=None, dest="max_iter")
    s.add_argument("--tol", type=float, default=1e-13)
    s.add_argument("--typ-val", type=float, default=1e3, dest="typ_val")
    s.add_argument("--alpha", type=float, default=0.8)
    s.add_argument("--beta", type=float, default=0.2)
    s.add_argument("--sigma", type=float, default=0.1)
    s.add_argument("--rho-min", type=float, default=1e-3, dest="rho_min")
    s.add_argument("--rho-max", type=float, default=1e5, dest="rho_max")
    s.add_argument("--heuristic", type=_bool, default=False)
    s.add_argument("--damping", type=_bool, default=True,
                   help="zeta damping for l1 / l_1/2 regularizers (default: true)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--m", type=int, default=500, help="lasso rows")
    s.add_argument("--n", type=int, default=2000, help="lasso columns")
    s.add_argument("--k-sparse", type=int, default=None, dest="k_sparse")
    s.add_argument("--noise", type=float, default=1e-2)
    s.add_argument("--p", type=int, default=50, help="tresca contact nodes")
    s.add_argument("--n-free", type=int, default=None, dest="n_free")
    s.add_argument("--out", type=Path, help="convergence log CSV")
    s.add_argument("--summary", type=Path, help="JSON summary (default: next to --out)")
    s.add_argument("--solution", type=Path, help="write the solution vector")
    return parser


def _build_problem(args):
    if args.problem == "tresca":
        toy = gen_tresca_toy(args.p, args.n_free, seed=args.seed)
        return toy.composite(), {"n": toy.n, "p": toy.p}
    if args.problem == "lasso":
        k = args.k_sparse if args.k_sparse is not None else max(1, args.n // 40)
        reg = gen_lasso(args.m, args.n, k, noise=args.noise, seed=args.seed,
                        lam_c=args.lambda_c, q=args.q)
    else:
        if args.matrix is None or args.rhs is None:
            raise UsageError("--problem file needs --matrix and --rhs")
        for pth in (args.matrix, args.rhs):
            if not pth.is_file():
                raise UsageError(f"no such file: {pth}")
        A = load_matrix_market(args.matrix)
        b = load_vector(args.rhs)
        if b.size != A.rows:
            raise UsageError(f"rhs has {b.size} entries, matrix has {A.rows} rows")
        reg = RegressionProblem.from_lambda_c(A, b, args.lambda_c, q=args.q)
    if args.mu is not None:
        if not args.mu > 0:
            raise UsageError("--mu must be positive")
        reg = replace(reg, mu=args.mu, lam_c=None)
    return reg.composite(), {"n": reg.n, "mu": reg.mu}


def _config(args, problem):
    damping = args.damping
    kw = dict(alpha=args.alpha, beta=args.beta, sigma=args.sigma, rho_min=args.rho_min,
              rho_max=args.rho_max, tol_factor=args.tol, typ_val=args.typ_val,
              direction_mode=args.direction, damping_enabled=damping)
    if args.max_iter is not None:
        kw["max_iter"] = args.max_iter
    try:
        cfg = SolverConfig(**kw)
        cfg.validate(problem)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _fista_log(problem, traj, lam):
    log = ConvergenceLog(rtol=math.inf)
    for k, (r, t) in enumerate(zip(traj.residual, traj.time_s), start=1):
        log.append(k, math.nan, math.nan, r / (1.0 + 1.0 / lam), lam, math.nan, math.nan,
                   math.nan, 0, t)
    return log


def cli_run(argv) -> int:
    """Run the CLI on ``argv``; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except UsageError as exc:
        print(f"gssn: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command != "solve":
        parser.print_help()
        return EXIT_USAGE
    try:
        problem, meta = _build_problem(args)
        cfg = _config(args, problem)
    except (UsageError, OSError, ValueError) as exc:
        print(f"gssn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    x0 = np.zeros(problem.dim)
    if args.solver == "gssn":
        if args.heuristic:
            res = heuristic_multistart(problem, x0, cfg)
        else:
            res = bas_gssn(problem, x0, cfg)
        status, log, sol = res.status, res.log, res.z_final
        iters, phi, resid = res.iterations, res.phi_final, res.residual_final
    elif args.solver == "pgm":
        res = pgm_baseline(problem, x0, max_iter=args.max_iter or 100000, config=cfg)
        status, log, sol = res.status, res.log, res.z_final
        iters, phi, resid = res.iterations, res.phi_final, res.residual_final
    else:
        cfg = cfg.resolve(problem)
        L = problem.smooth.lipschitz
        traj = fista_baseline(problem, x0, L, max_iter=args.max_iter or 1000)
        lam = 1.0 / L
        step = forward_backward(problem, traj.x_final, lam)
        sol, iters = traj.x_final, traj.iterations
        phi, resid = problem.objective(sol), step.residual
        thr = args.tol * max(args.typ_val, traj.residual[0] if traj.residual else resid)
        status = "converged" if resid <= thr else "max_iter"
        log = _fista_log(problem, traj, lam)

    summary = {
        "status": status,
        "iterations": int(iters),
        "phi_final": float(phi),
        "residual_final": float(resid),
        "nnz": int(np.count_nonzero(np.abs(sol) > NNZ_THRESHOLD)),
        "solver": args.solver,
        "problem": args.problem,
        **meta,
    }
    try:
        if args.out is not None:
            log.write_csv(args.out)
        target = args.summary or (args.out.with_suffix(".json") if args.out is not None else None)
        text = json.dumps(summary, indent=2)
        if target is not None:
            target.write_text(text + "\n")
        else:
            print(text)
        if args.solution is not None:
            save_vector(sol, args.solution)
    except OSError as exc:
        print(f"gssn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK if status == "converged" else EXIT_NOT_CONVERGED


def main() -> None:
    sys.exit(cli_run(sys.argv[1:]))


if __name__ == "__main__":
    main()
