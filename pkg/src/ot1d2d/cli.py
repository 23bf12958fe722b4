"""Command-line front end: solve benchmarks, run ladders, verify invariants.

Numbers are written with 17 significant digits so CSV round-trips reproduce
the float64 values bit for bit; the runtime column of converge output is the
one field that legitimately differs between runs.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .benchmarks import BENCHMARK_IDS, exact_error, make_problem
from .problems import build_grids, validate_problem
from .scheme import assemble_residual, build_context
from .solver import SolverConfig, newton_solve
from .verification import (
    ConvergenceReport,
    ConvergenceRow,
    consistency_rate,
    monotonicity_probe,
)

__all__ = ["RunConfig", "main"]

OUTDIR_ENV = "OT1D2D_OUTDIR"
DEFAULT_LADDER = (64, 128, 256, 512, 1024, 2048, 4096)


@dataclass(frozen=True)
class RunConfig:
    """Parsed CLI invocation."""

    command: str
    example: str
    n_values: tuple[int, ...]
    output: Optional[Path]
    tol: float
    max_iters: int
    prune: bool
    threads: int


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _default_outdir() -> Path:
    return Path(os.environ.get(OUTDIR_ENV, "."))


def _resolve_output(cfg: RunConfig, default_name: str) -> Path:
    if cfg.output is not None:
        return cfg.output
    return _default_outdir() / default_name


def _solver_config(cfg: RunConfig) -> SolverConfig:
    return SolverConfig(residual_tol=cfg.tol, max_iters=cfg.max_iters, prune=cfg.prune)


def _cmd_solve(cfg: RunConfig) -> int:
    spec = make_problem(cfg.example)
    n = cfg.n_values[0]
    grids = build_grids(spec.x_domain, spec.y_square, n)
    ctx = build_context(spec, grids)
    sol = newton_solve(ctx, _solver_config(cfg))

    u_exact = spec.exact_u(grids.x_nodes) if spec.exact_u is not None else None
    if u_exact is not None:
        u_exact = np.asarray(u_exact, dtype=float)
        u_exact = u_exact - u_exact.mean()
        errors = np.abs(sol.u - u_exact)
    path = _resolve_output(cfg, f"solve_{cfg.example}_n{n}.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,u,u_exact,error\n")
        for i, x in enumerate(grids.x_nodes):
            if u_exact is None:
                fh.write(f"{_fmt(x)},{_fmt(sol.u[i])},,\n")
            else:
                fh.write(
                    f"{_fmt(x)},{_fmt(sol.u[i])},{_fmt(u_exact[i])},{_fmt(errors[i])}\n"
                )
    max_err = exact_error(sol, spec) if spec.exact_u is not None else float("nan")
    print(
        f"solve {cfg.example}: N={n} M={grids.m_y} iterations={sol.iterations} "
        f"residual={sol.final_residual_norm:.3e} max_error={max_err:.6e}"
    )
    print(f"wrote {path}")
    if not sol.converged:
        # the CSV above still holds the best iterate; flag the shortfall
        print(
            f"error: stage solve: Newton stalled at residual "
            f"{sol.final_residual_norm:.3e} after {sol.iterations} iterations",
            file=sys.stderr,
        )
        return 1
    return 0


def _study_rows(cfg: RunConfig) -> ConvergenceReport:
    spec = make_problem(cfg.example)
    solver_cfg = _solver_config(cfg)
    ladder = sorted(set(cfg.n_values))

    def run_one(n: int) -> ConvergenceRow:
        import time

        grids = build_grids(spec.x_domain, spec.y_square, n)
        ctx = build_context(spec, grids)
        start = time.perf_counter()
        sol = newton_solve(ctx, solver_cfg)
        runtime = time.perf_counter() - start
        return ConvergenceRow(
            n_x=n,
            h_x=grids.h_x,
            m_y=grids.m_y,
            h_y=grids.h_y,
            max_error=exact_error(sol, spec),
            newton_iterations=sol.iterations,
            runtime_seconds=runtime,
            converged=sol.converged,
        )

    if cfg.threads > 1 and len(ladder) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            rows = list(pool.map(run_one, ladder))
    else:
        rows = [run_one(n) for n in ladder]
    return ConvergenceReport(benchmark_id=cfg.example, rows=tuple(rows))


def _cmd_converge(cfg: RunConfig) -> int:
    report = _study_rows(cfg)
    path = _resolve_output(cfg, f"converge_{cfg.example}.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("N,h_x,M,h_y,max_error,newton_iters,runtime_s\n")
        for row in report.rows:
            fh.write(
                f"{row.n_x},{_fmt(row.h_x)},{row.m_y},{_fmt(row.h_y)},"
                f"{_fmt(row.max_error)},{row.newton_iterations},"
                f"{_fmt(row.runtime_seconds)}\n"
            )
    for row in report.rows:
        flag = "" if row.converged else "  [did not converge]"
        print(
            f"N={row.n_x:5d} M={row.m_y:3d} max_error={row.max_error:.6e} "
            f"iters={row.newton_iterations:3d} runtime={row.runtime_seconds:.2f}s{flag}"
        )
    print(f"wrote {path}")
    if report.tainted:
        print("error: stage converge: at least one resolution did not converge",
              file=sys.stderr)
        return 1
    return 0


def _check_mass(spec, grids) -> tuple[bool, str]:
    report = validate_problem(spec, grids, mass_tol=1e-2, mass_refine=16)
    detail = f"mismatch={report.mass_mismatch:.3e}"
    return report.ok, detail


def _check_psi_matches_density(spec, ctx) -> tuple[bool, str]:
    g = np.asarray(spec.g(ctx.y1m, ctx.y2m), dtype=float)
    gap = np.max(np.abs(ctx.psi - g[None, :]) / (1.0 + np.abs(g[None, :])))
    return bool(gap <= 1e-12), f"max_rel_gap={gap:.3e}"


def _check_proper_identity(ctx, trials: int = 20, seed: int = 7) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    n = ctx.grids.n_x
    worst = 0.0
    for _ in range(trials):
        u = rng.normal(0.0, 1.0, n + 1)
        kappa = rng.uniform(-2.0, 2.0)
        base = assemble_residual(ctx, u)
        shifted = assemble_residual(ctx, u + kappa)
        expected = np.full(n + 1, ctx.rho_int * kappa)
        expected[0] = expected[-1] = ctx.rho_bdy * kappa
        scale = 1.0 + float(np.max(np.abs(base)))
        gap = float(np.max(np.abs(shifted - base - expected))) / scale
        worst = max(worst, gap)
    return worst <= 1e-13, f"worst_rel_gap={worst:.3e}"


def _check_monotonicity(ctx, trials: int = 10_000, seed: int = 0) -> tuple[bool, str]:
    result = monotonicity_probe(ctx, trials=trials, seed=seed)
    if result.passed:
        return True, f"trials={result.trials}"
    w = result.witness
    return False, f"violated at row {w.row} perturbing node {w.perturbed_node}"


def _check_consistency_rate(cfg: RunConfig) -> tuple[bool, str]:
    n = cfg.n_values[0]
    ladder = (n, 2 * n, 4 * n)
    est = consistency_rate(cfg.example, ladder)
    ok = 0.3 <= est.fitted_exponent <= 1.2
    return ok, f"exponent={est.fitted_exponent:.3f} over N={ladder}"


def _cmd_verify(cfg: RunConfig) -> int:
    spec = make_problem(cfg.example)
    n = cfg.n_values[0]
    grids = build_grids(spec.x_domain, spec.y_square, n)
    ctx = build_context(spec, grids)

    checks = [
        ("mass-balance", lambda: _check_mass(spec, grids)),
        ("psi-matches-density", lambda: _check_psi_matches_density(spec, ctx)),
        ("proper-identity", lambda: _check_proper_identity(ctx)),
        ("monotonicity-probe", lambda: _check_monotonicity(ctx)),
        ("consistency-rate", lambda: _check_consistency_rate(cfg)),
    ]
    failed = []
    for name, run in checks:
        ok, detail = run()
        status = "PASS" if ok else "FAIL"
        print(f"{name:22s} {status}  {detail}")
        if not ok:
            failed.append(name)
    if failed:
        print(f"error: stage verify: failed checks: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _parse_n_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(tok) for tok in text.replace(" ", "").split(",") if tok)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad resolution list {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("resolution list is empty")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ot1d2d",
        description="Monotone finite-difference solver for 1D -> 2D optimal transport.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, with_ladder: bool) -> None:
        p.add_argument(
            "--example",
            required=True,
            choices=BENCHMARK_IDS,
            help="benchmark problem to run",
        )
        if with_ladder:
            p.add_argument(
                "--n-list",
                type=_parse_n_list,
                default=DEFAULT_LADDER,
                help="comma-separated source resolutions (default 64..4096)",
            )
        else:
            p.add_argument("--n", type=int, default=512, help="source cells (default 512)")
        p.add_argument("--output", type=Path, default=None, help="output CSV path")
        p.add_argument("--tol", type=float, default=1e-10, help="residual tolerance")
        p.add_argument("--max-iters", type=int, default=100, help="Newton iteration cap")
        p.add_argument(
            "--no-prune",
            action="store_true",
            help="disable skipping of certified-inactive delta nodes",
        )
        p.add_argument(
            "--threads",
            type=int,
            default=os.cpu_count() or 1,
            help="worker threads for ladder runs (default: CPU count)",
        )

    add_common(sub.add_parser("solve", help="solve one resolution, write x/u/error CSV"), False)
    add_common(sub.add_parser("converge", help="run a resolution ladder, write error table"), True)
    add_common(sub.add_parser("verify", help="run scheme invariant checks"), False)
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    n_values = args.n_list if hasattr(args, "n_list") else (args.n,)
    if any(n < 2 for n in n_values):
        raise ValueError("resolutions must be at least 2")
    return RunConfig(
        command=args.command,
        example=args.example,
        n_values=tuple(n_values),
        output=args.output,
        tol=args.tol,
        max_iters=args.max_iters,
        prune=not args.no_prune,
        threads=max(1, args.threads),
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _run_config(args)
        if cfg.command == "solve":
            return _cmd_solve(cfg)
        if cfg.command == "converge":
            return _cmd_converge(cfg)
        return _cmd_verify(cfg)
    except Exception as exc:  # surface the failing stage, not a traceback
        print(f"error: stage {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
