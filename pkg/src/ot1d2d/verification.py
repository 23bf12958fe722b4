"""Cross-checks for the scheme: oracles, probes, and convergence studies.

Everything here validates the solver pipeline from the outside.  The
semi-discrete oracle re-derives the y-quadrature directly from problem data
(continuous in x, so no finite differences), the monotonicity probe attacks
assembled residual entries with random perturbations, and the study/rate
helpers produce the tables behind the convergence claims.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .benchmarks import exact_error, make_problem
from .problems import ProblemSpec, build_grids
from .scheme import SchemeContext, assemble_residual, build_context, residual_entry
from .solver import SolutionVector, SolverConfig, newton_solve

__all__ = [
    "ConvergenceRow",
    "ConvergenceReport",
    "RateEstimate",
    "ProbeWitness",
    "ProbeResult",
    "TransportSupport",
    "semi_discrete_oracle",
    "monotonicity_probe",
    "swapped_difference_entry",
    "consistency_rate",
    "convergence_study",
    "transport_support",
]


def semi_discrete_oracle(
    spec: ProblemSpec, x: float, du: float, ddu: float, m_fine: int
) -> float:
    """Quadrature of the transport integrand at one x, straight from problem data.

    Builds its own y-grid with m_fine cells per side and evaluates

        h^2 * sum (ddu + c_xx)^+ * psi * hat((du + c_x) / eps) / eps

    over support nodes, with the same width rule eps = h * max(l1-slope, 1)
    capped at the square width.  No scheme tables and no x-differencing are
    involved, so this is an independent route to the interior sum.
    """
    if m_fine < 1:
        raise ValueError(f"m_fine must be positive, got {m_fine}")
    side = np.linspace(spec.y_square.lo, spec.y_square.hi, m_fine + 1)
    h = spec.y_square.width / m_fine
    y1, y2 = np.meshgrid(side, side, indexing="ij")
    mask = np.asarray(spec.y_membership(y1, y2), dtype=bool)
    if not mask.any():
        return 0.0
    y1m = y1[mask]
    y2m = y2[mask]

    c_x = np.asarray(spec.cost.c_x(x, y1m, y2m), dtype=float)
    c_xx = np.asarray(spec.cost.c_xx(x, y1m, y2m), dtype=float)
    c_xy1 = np.asarray(spec.cost.c_xy1(x, y1m, y2m), dtype=float)
    c_xy2 = np.asarray(spec.cost.c_xy2(x, y1m, y2m), dtype=float)
    g = np.asarray(spec.g(y1m, y2m), dtype=float)

    psi = g * (np.hypot(c_xy1, c_xy2) / np.sqrt(c_xy1**2 + c_xy2**2))
    eps = h * np.maximum(np.abs(c_xy1) + np.abs(c_xy2), 1.0)
    np.minimum(eps, spec.y_square.width, out=eps)

    hat = np.maximum(1.0 - np.abs(du + c_x) / eps, 0.0) / eps
    pos = np.maximum(ddu + c_xx, 0.0)
    return float(h * h * np.sum(pos * psi * hat))


@dataclass(frozen=True)
class ProbeWitness:
    """One recorded monotonicity violation: the row value moved the wrong way."""

    trial: int
    row: int
    perturbed_node: int
    bump: float
    before: float
    after: float


@dataclass(frozen=True)
class ProbeResult:
    passed: bool
    trials: int
    seed: int
    witness: Optional[ProbeWitness] = None


def swapped_difference_entry(ctx: SchemeContext, u, i: int) -> float:
    """Residual entry with the one-sided differences fed to the wrong hat branches.

    Negative control for the monotonicity probe: using the forward difference
    where the backward one belongs (and vice versa) flips the sign structure
    of the hat's dependence on the neighbors, so a correct probe must catch it.
    """
    u = np.asarray(u, dtype=float)
    n = ctx.grids.n_x
    if i == 0 or i == n:
        return residual_entry(ctx, u, i)
    h = ctx.grids.h_x
    swapped_minus = u[i + 1] - u[i]
    swapped_plus = u[i - 1] - u[i]
    cx = ctx.c_x[i]
    eps = ctx.eps[i]
    backward = swapped_minus / h + cx
    forward = swapped_plus / h - cx
    inner = np.maximum(np.maximum(backward, forward), 0.0)
    delta = np.maximum(1.0 - inner / eps, 0.0) / eps
    dxx = ((u[i - 1] - u[i]) + (u[i + 1] - u[i])) / (h * h)
    pos = np.maximum(dxx + ctx.c_xx[i], 0.0)
    s = float(np.sum(pos * ctx.psi[i] * delta))
    return float(-ctx.grids.h_y**2 * s + ctx.f_nodes[i] + ctx.rho_int * u[i])


def monotonicity_probe(
    ctx: SchemeContext,
    trials: int = 10_000,
    seed: int = 0,
    entry_fn: Callable[[SchemeContext, np.ndarray, int], float] = residual_entry,
) -> ProbeResult:
    """Randomized check of degenerate ellipticity of single residual entries.

    Each trial samples a potential with slopes spanning the feasible band of
    -c_x (so the hats are actually exercised), perturbs one node upward, and
    checks the signed movement of one residual entry: non-decreasing in the
    row's own node, non-increasing in its neighbors.  entry_fn exists so a
    deliberately broken row evaluator can serve as a negative control.
    """
    rng = np.random.default_rng(seed)
    n = ctx.grids.n_x
    h = ctx.grids.h_x
    slope_lo = ctx.bc_inf_left - 1.0
    slope_hi = ctx.bc_sup_right + 1.0
    # Comparisons sit on float noise of the assembled sums; violations of a
    # genuinely non-monotone row are orders of magnitude above this slack.
    slack = 1e-9 * (1.0 + abs(float(ctx.f_nodes.max())))

    for trial in range(trials):
        slopes = rng.uniform(slope_lo, slope_hi, n)
        u = np.concatenate(([0.0], np.cumsum(slopes))) * h
        u += rng.normal(0.0, 0.3 * h, n + 1)
        row = int(rng.integers(0, n + 1))
        offset = int(rng.integers(-1, 2))
        node = min(max(row + offset, 0), n)
        bump = 10.0 ** rng.uniform(-6.0, 0.0)

        before = entry_fn(ctx, u, row)
        bumped = u.copy()
        bumped[node] += bump
        after = entry_fn(ctx, bumped, row)

        if node == row:
            bad = after < before - slack
        else:
            bad = after > before + slack
        if bad:
            return ProbeResult(
                passed=False,
                trials=trials,
                seed=seed,
                witness=ProbeWitness(
                    trial=trial,
                    row=row,
                    perturbed_node=node,
                    bump=bump,
                    before=before,
                    after=after,
                ),
            )
    return ProbeResult(passed=True, trials=trials, seed=seed)


@dataclass(frozen=True)
class RateEstimate:
    """Least-squares slope of log(value) against log(h_x)."""

    fitted_exponent: float
    fit_residual: float
    sample_count: int


def _fit_rate(h_values: Sequence[float], values: Sequence[float]) -> RateEstimate:
    log_h = np.log(np.asarray(h_values, dtype=float))
    log_v = np.log(np.asarray(values, dtype=float))
    coeffs, residuals, *_ = np.polyfit(log_h, log_v, 1, full=True)
    rss = float(residuals[0]) if residuals.size else 0.0
    return RateEstimate(
        fitted_exponent=float(coeffs[0]),
        fit_residual=float(np.sqrt(rss / log_h.size)),
        sample_count=log_h.size,
    )


def consistency_rate(
    benchmark_id: str,
    n_ladder: Sequence[int],
    fit_points: int = 3,
    fixed_epsilon: bool = False,
) -> RateEstimate:
    """Decay rate of the interior residual evaluated at the exact potential.

    For each ladder entry the residual is assembled at exact nodal values and
    its interior max-norm recorded; the rate is fitted on the fit_points
    largest resolutions.  fixed_epsilon=True reruns the study with hat widths
    pinned to h_y, the negative control that under-resolves oblique level
    lines.
    """
    spec = make_problem(benchmark_id)
    if spec.exact_u is None:
        raise ValueError(f"benchmark {benchmark_id!r} has no exact potential")
    ladder = sorted(set(int(n) for n in n_ladder))
    if len(ladder) < fit_points or fit_points < 2:
        raise ValueError(
            f"need at least {max(fit_points, 2)} distinct resolutions, got {len(ladder)}"
        )
    h_values = []
    norms = []
    for n in ladder:
        grids = build_grids(spec.x_domain, spec.y_square, n)
        ctx = build_context(spec, grids, fixed_epsilon=fixed_epsilon)
        u = np.asarray(spec.exact_u(grids.x_nodes), dtype=float)
        res = assemble_residual(ctx, u)
        h_values.append(grids.h_x)
        norms.append(float(np.max(np.abs(res[1:-1]))))
    return _fit_rate(h_values[-fit_points:], norms[-fit_points:])


@dataclass(frozen=True)
class ConvergenceRow:
    n_x: int
    h_x: float
    m_y: int
    h_y: float
    max_error: float
    newton_iterations: int
    runtime_seconds: float
    converged: bool


@dataclass(frozen=True)
class ConvergenceReport:
    benchmark_id: str
    rows: tuple[ConvergenceRow, ...]

    @property
    def tainted(self) -> bool:
        """True when any ladder entry failed to converge."""
        return any(not row.converged for row in self.rows)


def convergence_study(
    benchmark_id: str,
    n_ladder: Sequence[int],
    cfg: SolverConfig = SolverConfig(),
) -> ConvergenceReport:
    """Solve the benchmark across a resolution ladder and tabulate errors.

    Runtime is the newton_solve wall clock only; context construction is
    excluded.  Rows keep their converged flag so a stalled solve taints the
    report instead of silently polluting the error column.
    """
    spec = make_problem(benchmark_id)
    ladder = sorted(set(int(n) for n in n_ladder))
    if not ladder:
        raise ValueError("resolution ladder is empty")
    rows = []
    for n in ladder:
        grids = build_grids(spec.x_domain, spec.y_square, n)
        ctx = build_context(spec, grids)
        start = time.perf_counter()
        sol = newton_solve(ctx, cfg)
        runtime = time.perf_counter() - start
        rows.append(
            ConvergenceRow(
                n_x=n,
                h_x=grids.h_x,
                m_y=grids.m_y,
                h_y=grids.h_y,
                max_error=exact_error(sol, spec),
                newton_iterations=sol.iterations,
                runtime_seconds=runtime,
                converged=sol.converged,
            )
        )
    return ConvergenceReport(benchmark_id=benchmark_id, rows=tuple(rows))


@dataclass(frozen=True)
class TransportSupport:
    """Masked nodes with active hats at one source node, plus their weights.

    weights holds h_y^2 * psi * delta per active node; their weighted sum
    against the positive curvature factor reproduces the interior sum the
    residual saw, which ties the reported support to what was integrated.
    """

    row: int
    node_j: np.ndarray
    node_k: np.ndarray
    points: np.ndarray  # (count, 2) coordinates
    weights: np.ndarray

    @property
    def count(self) -> int:
        return self.weights.size


def transport_support(ctx: SchemeContext, sol: SolutionVector, i: int) -> TransportSupport:
    """Where the delta actually integrated at interior node i for this solution."""
    n = ctx.grids.n_x
    if not 1 <= i <= n - 1:
        raise ValueError(f"interior index must be in [1, {n - 1}], got {i}")
    u = np.asarray(sol.u, dtype=float)
    h = ctx.grids.h_x
    from .scheme import monotone_delta  # local import keeps module deps one-way

    delta = monotone_delta(u[i] - u[i - 1], u[i] - u[i + 1], ctx.c_x[i], h, ctx.eps[i])
    active = delta > 0.0
    weights = ctx.grids.h_y**2 * ctx.psi[i][active] * delta[active]
    return TransportSupport(
        row=i,
        node_j=ctx.node_j[active].copy(),
        node_k=ctx.node_k[active].copy(),
        points=np.column_stack((ctx.y1m[active], ctx.y2m[active])),
        weights=weights,
    )
