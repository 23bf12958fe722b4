"""Semismooth Newton solver for the discrete transport system.

The residual is piecewise smooth (positive parts and hat kinks), so each
iteration solves a tridiagonal system with one element of the generalized
Jacobian and backtracks on the max-norm of the residual.  Because the scheme
is proper and monotone the Jacobian is strictly diagonally dominant, which
keeps the banded factorization safe without pivot growth surprises.

Cold starts need globalization: at fine grids the residual is piecewise
linear on panels whose size shrinks with h, and plain damped Newton from far
away crawls through kink after kink.  newton_solve therefore nests grids --
it solves the same problem on a doubling ladder of x-resolutions, starting
each level from the interpolated solution of the coarser one, so every fine
solve begins inside its contraction basin.  All level iterations count
against max_iters.  Starts that leave rows without any active hat entry or
positive curvature (their Jacobian row degenerates to the proper diagonal)
are first bent onto the quadratic whose one-sided slopes match the two
boundary targets.

Problems whose solution parks rows exactly on that degenerate branch (it
happens when the target mass available to edge rows runs short, so the row
balances as u = -f/rho with every hat dead) defeat both plain Newton and
warm starts: near such a solution whole Jacobian rows shrink to the tiny
proper diagonal and Newton directions turn into iterate-wrecking spikes.
For those the solve falls back to a smoothing path: every kink is mollified
with width beta, the mollified system (still monotone and proper, but with
rows that cannot go blind) is solved down a geometric beta ladder, and the
exact iteration polishes the endpoint.  The ladder tracks the mollified
solution path, and the crossing where the degenerate-edge structure forms
gets harder as the grid refines: it converges routinely up to a few hundred
cells but stalls around a thousand, so very fine runs on such problems end
with converged=False and the best iterate found.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.linalg import lapack

from .problems import GridPair, build_grids
from .scheme import (
    SchemeContext,
    TridiagonalMatrix,
    assemble_generalized_jacobian,
    assemble_residual,
    build_context,
)

__all__ = [
    "LinearSolveError",
    "SolverConfig",
    "SolutionVector",
    "tridiagonal_solve",
    "normalize_mean_zero",
    "newton_solve",
]

INITIAL_GUESSES = ("zero", "quadratic-bowl")


class LinearSolveError(RuntimeError):
    """Tridiagonal factorization hit an exactly zero pivot."""

    def __init__(self, pivot_index: int):
        super().__init__(f"zero pivot at row {pivot_index} of tridiagonal solve")
        self.pivot_index = pivot_index


def tridiagonal_solve(matrix: TridiagonalMatrix, rhs) -> np.ndarray:
    """Solve matrix @ x = rhs by banded LU with partial pivoting."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (matrix.size,):
        raise ValueError(f"rhs shape {rhs.shape} does not match matrix size {matrix.size}")
    dl = np.ascontiguousarray(matrix.sub[1:], dtype=float)
    d = np.ascontiguousarray(matrix.diag, dtype=float)
    du = np.ascontiguousarray(matrix.sup[:-1], dtype=float)
    _, _, _, x, info = lapack.dgtsv(dl, d, du, rhs)
    if info > 0:
        raise LinearSolveError(pivot_index=info - 1)
    if info < 0:
        raise ValueError(f"illegal argument {-info} passed to banded solver")
    return x


def normalize_mean_zero(v: np.ndarray) -> np.ndarray:
    """Shift a vector so its mean over all nodes is zero."""
    v = np.asarray(v, dtype=float)
    return v - v.mean()


@dataclass(frozen=True)
class SolverConfig:
    """Newton iteration controls.

    initial_guess is "zero", "quadratic-bowl" (half the squared distance to
    the domain midpoint, a strictly convex seed), or an explicit vector.
    Backtracking halves the step until the residual max-norm drops; if the
    step underflows min_step the full step is taken anyway, since monotone
    residuals can demand walking through a flat kink region.
    """

    residual_tol: float = 1e-10
    max_iters: int = 100
    damping_factor: float = 0.5
    min_step: float = 2.0**-20
    initial_guess: Union[str, np.ndarray] = "zero"
    prune: bool = True

    def __post_init__(self) -> None:
        if not self.residual_tol > 0.0:
            raise ValueError("residual_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0.0 < self.damping_factor < 1.0:
            raise ValueError("damping_factor must lie in (0, 1)")
        if isinstance(self.initial_guess, str):
            if self.initial_guess not in INITIAL_GUESSES:
                raise ValueError(
                    f"initial_guess must be one of {INITIAL_GUESSES} or a vector"
                )


@dataclass(frozen=True)
class SolutionVector:
    """Solver output: the mean-zero potential plus iteration diagnostics.

    u is raw_v shifted to discrete mean zero over all nodes; raw_v is the
    iterate the proper system actually converged to (its size is O(h) because
    the rho-terms penalize any drift of the additive constant).
    stage_iterations records the Newton count per nested-grid level (coarsest
    first); if the smoothing rescue engaged, its total and the final polish
    count follow the level entries.  seeded_start marks runs whose initial
    vector had to be bent onto the banded quadratic before every row's
    linearization could see the transport term.
    """

    u: np.ndarray
    raw_v: np.ndarray
    grids: GridPair
    iterations: int
    final_residual_norm: float
    converged: bool
    step_sizes: tuple[float, ...] = field(default=(), repr=False)
    forced_full_steps: int = 0
    stage_iterations: tuple[int, ...] = ()
    seeded_start: bool = False


def _initial_vector(cfg: SolverConfig, grids: GridPair) -> np.ndarray:
    if isinstance(cfg.initial_guess, str):
        if cfg.initial_guess == "zero":
            return np.zeros(grids.n_x + 1)
        mid = 0.5 * (grids.x_nodes[0] + grids.x_nodes[-1])
        return 0.5 * np.square(grids.x_nodes - mid)
    v = np.array(cfg.initial_guess, dtype=float)
    if v.shape != (grids.n_x + 1,):
        raise ValueError(
            f"initial guess has shape {v.shape}, expected ({grids.n_x + 1},)"
        )
    return v


COARSEST_LEVEL = 32
STALL_WINDOW = 20
STALL_FACTOR = 0.99
INTERMEDIATE_TOL = 1e-8
STUCK_FACTOR = 1e4
SMOOTHING_START = 0.5
SMOOTHING_CUT = 0.5
SMOOTHING_STOP = 1e-6
SMOOTHING_STAGE_BUDGET = 40
SMOOTHING_STALL = 15


def _quadratic_band_seed(ctx: SchemeContext) -> np.ndarray:
    """Quadratic whose one-sided slopes hit both boundary targets exactly."""
    x = ctx.grids.x_nodes
    span = x[-1] - x[0]
    lo = ctx.bc_inf_left
    hi = ctx.bc_sup_right
    t = x - x[0]
    return lo * t + 0.5 * (hi - lo) * np.square(t) / span


def _is_flat_start(ctx: SchemeContext, u: np.ndarray) -> bool:
    """True when no interior row sees positive curvature at any masked node."""
    n = ctx.grids.n_x
    if n < 2:
        return False
    h = ctx.grids.h_x
    dxx = ((u[:-2] - u[1:-1]) + (u[2:] - u[1:-1])) / (h * h)
    row_max_cxx = ctx.c_xx[1:n].max(axis=1)
    return bool(np.all(dxx + row_max_cxx <= 0.0))


def _needs_band_seed(ctx: SchemeContext, u: np.ndarray) -> bool:
    """Detect starts Newton cannot work with: rows whose linearization is blind.

    A row with no active hat entry (or no positive curvature anywhere) has a
    residual of exactly f + rho*u and a Jacobian row of just rho, so the
    Newton direction there is the useless -f/rho.  Cold starts on problems
    whose exact slopes sit far from the start's slopes produce such rows; the
    banded quadratic seed activates every row at once.
    """
    if _is_flat_start(ctx, u):
        return True
    residual = assemble_residual(ctx, u)
    interior = slice(1, ctx.grids.n_x)
    transport = ctx.f_nodes[interior] + ctx.rho_int * u[interior] - residual[interior]
    return bool(np.any((transport <= 0.0) & (ctx.f_nodes[interior] > 0.0)))


def _refinement_levels(n: int) -> list[int]:
    """Grid sizes from the coarsest warm-up level up to n, by doubling."""
    levels = [n]
    while levels[-1] > COARSEST_LEVEL and levels[-1] % 2 == 0:
        levels.append(levels[-1] // 2)
    return levels[::-1]


def _residual_norm(ctx: SchemeContext, u: np.ndarray, cfg: SolverConfig) -> float:
    return float(np.max(np.abs(assemble_residual(ctx, u, prune=cfg.prune))))


def _smoothed_system(ctx: SchemeContext, u: np.ndarray, beta: float):
    """Residual and tridiagonal Jacobian with every kink beta-mollified.

    All three non-smooth spots of the interior rows -- the curvature clamp,
    the choice between the two one-sided hat branches, and the hat's own
    cutoff -- are replaced by x -> (x + sqrt(x^2 + beta^2)) / 2, which keeps
    the row monotone in its own unknown and, crucially, strictly positive:
    a smoothed row can never lose all transport sensitivity, so the cold-
    start failure where whole stretches of rows collapse onto the proper
    branch u = -f/rho (their exact Jacobian rows degenerate to the tiny rho
    diagonal and Newton answers with iterate-wrecking spikes) cannot occur.
    The boundary rows are linear and need no smoothing.  At beta -> 0 this
    reproduces assemble_residual and one valid generalized Jacobian.
    """
    h = ctx.grids.h_x
    hy2 = ctx.grids.h_y**2
    rho = ctx.rho_int
    n = ctx.grids.n_x
    cx = ctx.c_x[1:-1]
    cxx = ctx.c_xx[1:-1]
    psi = ctx.psi[1:-1]
    eps = ctx.eps[1:-1]

    slope_m = (u[1:-1] - u[:-2]) / h
    slope_p = (u[1:-1] - u[2:]) / h
    dxx = (u[:-2] - 2.0 * u[1:-1] + u[2:]) / (h * h)

    backward = slope_m[:, None] + cx
    forward = slope_p[:, None] - cx
    gap = backward - forward
    rt = np.sqrt(gap * gap + beta * beta)
    larger = 0.5 * (backward + forward + rt)
    w_back = 0.5 * (1.0 + gap / rt)
    w_fwd = 1.0 - w_back
    rt0 = np.sqrt(larger * larger + beta * beta)
    pos = 0.5 * (larger + rt0)
    w_pos = 0.5 * (1.0 + larger / rt0)
    slack = 1.0 - pos / eps
    rt_slack = np.sqrt(slack * slack + beta * beta)
    hat = 0.5 * (slack + rt_slack) / eps
    dhat_dpos = -0.5 * (1.0 + slack / rt_slack) / (eps * eps)
    curv_arg = dxx[:, None] + cxx
    rt_curv = np.sqrt(curv_arg * curv_arg + beta * beta)
    curv = 0.5 * (curv_arg + rt_curv)
    dcurv = 0.5 * (1.0 + curv_arg / rt_curv)

    residual = np.empty(n + 1)
    residual[1:-1] = (
        -hy2 * np.einsum("rm,rm,rm->r", psi, curv, hat)
        + ctx.f_nodes[1:-1]
        + rho * u[1:-1]
    )
    residual[0] = -(u[1] - u[0]) / h + ctx.bc_inf_left + ctx.rho_bdy * u[0]
    residual[-1] = (u[-1] - u[-2]) / h - ctx.bc_sup_right + ctx.rho_bdy * u[-1]

    psi_hat = psi * hat
    chain = psi * curv * dhat_dpos * w_pos
    curv_sum = np.einsum("rm,rm->r", psi_hat, dcurv)
    pos_center = np.einsum("rm,rm->r", chain, w_back + w_fwd) / h
    pos_minus = -np.einsum("rm,rm->r", chain, w_back) / h
    pos_plus = -np.einsum("rm,rm->r", chain, w_fwd) / h

    diag = np.empty(n + 1)
    sub = np.zeros(n + 1)
    sup = np.zeros(n + 1)
    diag[1:-1] = -hy2 * (curv_sum * (-2.0 / (h * h)) + pos_center) + rho
    sub[1:-1] = -hy2 * (curv_sum / (h * h) + pos_minus)
    sup[1:-1] = -hy2 * (curv_sum / (h * h) + pos_plus)
    diag[0] = 1.0 / h + ctx.rho_bdy
    sup[0] = -1.0 / h
    diag[-1] = 1.0 / h + ctx.rho_bdy
    sub[-1] = -1.0 / h
    return residual, TridiagonalMatrix(sub=sub, diag=diag, sup=sup)


def _smoothing_descent(ctx: SchemeContext, cfg: SolverConfig, u: np.ndarray, budget: int):
    """Damped Newton on the beta-smoothed system down a geometric beta ladder.

    The rescue for iterates wedged in the kink forest: each stage relaxes the
    smoothing a little and re-solves to a tolerance proportional to beta.
    Mid-ladder stages routinely stop on their budget without meeting it; that
    is fine -- they only need to hand a better iterate to the next stage, and
    the ladder as a whole walks through configurations that block the exact
    iteration outright.  Halving beta per stage is load-bearing: more
    aggressive cuts strand the iterate between stages that no longer resemble
    each other, and the ladder ends far from the root no matter how its
    budget is spent.  The ladder stops at SMOOTHING_STOP because stages below
    it track the exact system to far better than the exact polish needs,
    while stages near the rounding floor of the residual just burn their
    stall windows.  Every inner step counts against the caller's budget.
    """
    total = 0
    beta = SMOOTHING_START
    while beta > SMOOTHING_STOP and total < budget:
        stage_tol = max(cfg.residual_tol, 0.05 * beta)
        residual, jac = _smoothed_system(ctx, u, beta)
        norm = float(np.max(np.abs(residual)))
        best_norm, since_best, k = norm, 0, 0
        while (
            norm > stage_tol
            and k < min(SMOOTHING_STAGE_BUDGET, budget - total)
            and since_best < SMOOTHING_STALL
        ):
            direction = tridiagonal_solve(jac, -residual)
            alpha = 1.0
            while True:
                trial = u + alpha * direction
                trial_residual, trial_jac = _smoothed_system(ctx, trial, beta)
                trial_norm = float(np.max(np.abs(trial_residual)))
                if trial_norm < norm:
                    break
                alpha *= cfg.damping_factor
                if alpha < cfg.min_step:
                    alpha = 1.0
                    trial = u + direction
                    trial_residual, trial_jac = _smoothed_system(ctx, trial, beta)
                    trial_norm = float(np.max(np.abs(trial_residual)))
                    break
            u, residual, jac, norm = trial, trial_residual, trial_jac, trial_norm
            k += 1
            since_best = 0 if norm < STALL_FACTOR * best_norm else since_best + 1
            if norm < best_norm:
                best_norm = norm
        total += k
        beta *= SMOOTHING_CUT
    return u, total


def _damped_newton(ctx, cfg, u, budget, tol):
    """The configured damped semismooth iteration at one grid.

    Backtracking on strict max-norm decrease, full step once damping
    underflows min_step, stop at tol or when the budget runs out.
    A stagnation exit ends the loop early once the best norm has gone
    STALL_WINDOW iterations without a one-percent improvement, which happens
    when the iterate reaches the resolution floor that rounding of u itself
    imposes on the residual (the Jacobian rows are O(h_y^2/h_x^2), so one ulp
    of u moves the residual by orders more than machine epsilon).
    """
    residual = assemble_residual(ctx, u, prune=cfg.prune)
    norm = float(np.max(np.abs(residual)))
    steps: list[float] = []
    forced = 0
    best_norm, best_u, since_best = norm, u, 0
    while norm > tol and len(steps) < budget:
        jac = assemble_generalized_jacobian(ctx, u, prune=cfg.prune)
        direction = tridiagonal_solve(jac, -residual)

        alpha = 1.0
        while True:
            trial = u + alpha * direction
            trial_residual = assemble_residual(ctx, trial, prune=cfg.prune)
            trial_norm = float(np.max(np.abs(trial_residual)))
            if trial_norm < norm:
                break
            alpha *= cfg.damping_factor
            if alpha < cfg.min_step:
                alpha = 1.0
                trial = u + direction
                trial_residual = assemble_residual(ctx, trial, prune=cfg.prune)
                trial_norm = float(np.max(np.abs(trial_residual)))
                forced += 1
                break

        u, residual, norm = trial, trial_residual, trial_norm
        steps.append(alpha)
        meaningfully_better = norm < STALL_FACTOR * best_norm
        if norm < best_norm:
            best_norm, best_u = norm, u
        since_best = 0 if meaningfully_better else since_best + 1
        if since_best >= STALL_WINDOW:
            break
    if best_norm < norm:
        u, norm = best_u, best_norm
    return u, norm, steps, forced


def newton_solve(ctx: SchemeContext, cfg: SolverConfig = SolverConfig()) -> SolutionVector:
    """Solve the discrete system by grid-nested damped semismooth Newton.

    Away from the solution the residual is piecewise linear on panels whose
    size shrinks with the grid, so a cold start on a fine grid makes the line
    search crawl through forests of kinks.  The solve therefore walks a
    doubling ladder of grids: the coarsest level (<= COARSEST_LEVEL cells)
    starts from the configured guess -- replaced by the banded quadratic seed
    when the guess leaves degenerate rows or the seed's residual is already
    smaller -- and every finer level starts from the linear interpolant of the
    previous one, which normally lands inside the basin where the damped
    iteration contracts.  Intermediate levels stop at the looser
    INTERMEDIATE_TOL, since their job is only to supply a warm start; a level
    that stalls far above it aborts the ladder instead of feeding garbage
    upward.  If the finest grid still ends far from the tolerance (beyond the
    rounding floor by STUCK_FACTOR), the iterate is wedged between hat kinks
    and the solve falls back to the beta-smoothed ladder of _smoothing_descent
    before a final exact polish; whichever of the pre-rescue and polished
    iterates carries the smaller residual is returned.  Iterations are
    counted across every level, every smoothing stage, and the final polish
    (plus one for a seeded start).  Non-convergence within max_iters is
    reported through the converged flag, not an exception, so ladder studies
    can record and continue.
    """
    grids = ctx.grids
    u = _initial_vector(cfg, grids)
    residual = assemble_residual(ctx, u, prune=cfg.prune)
    norm = float(np.max(np.abs(residual)))

    steps: list[float] = []
    forced = 0
    iterations = 0
    level_iters: list[int] = []
    seeded = False

    if norm > cfg.residual_tol:
        level_u = None
        level_x = grids.x_nodes
        for level_n in _refinement_levels(grids.n_x):
            if level_n == grids.n_x:
                level_ctx = ctx
            else:
                level_grids = build_grids(ctx.spec.x_domain, ctx.spec.y_square, level_n)
                level_ctx = build_context(
                    ctx.spec, level_grids, fixed_epsilon=ctx.fixed_epsilon
                )
            prev_x, level_x = level_x, level_ctx.grids.x_nodes
            if level_u is None:
                level_u = np.interp(level_x, grids.x_nodes, u)
                band = _quadratic_band_seed(level_ctx)
                if _needs_band_seed(level_ctx, level_u) or _residual_norm(
                    level_ctx, band, cfg
                ) < _residual_norm(level_ctx, level_u, cfg):
                    level_u = band
                    seeded = True
                    iterations += 1
            else:
                level_u = np.interp(level_x, prev_x, level_u)
            budget = cfg.max_iters - iterations
            if budget <= 0:
                continue
            level_tol = (
                cfg.residual_tol
                if level_n == grids.n_x
                else max(cfg.residual_tol, INTERMEDIATE_TOL)
            )
            level_u, level_norm, level_steps, level_forced = _damped_newton(
                level_ctx, cfg, level_u, budget, level_tol
            )
            steps.extend(level_steps)
            forced += level_forced
            iterations += len(level_steps)
            level_iters.append(len(level_steps))
            if level_norm > STUCK_FACTOR * level_tol:
                # the warm-start chain is broken; stop feeding it upward and
                # let the smoothing rescue take over on the target grid
                break

        u = np.interp(grids.x_nodes, level_x, level_u)
        norm = _residual_norm(ctx, u, cfg)

        stuck = norm > max(STUCK_FACTOR * cfg.residual_tol, INTERMEDIATE_TOL)
        if stuck and iterations < cfg.max_iters:
            before_rescue_u, before_rescue_norm = u, norm
            u, rescue_iters = _smoothing_descent(
                ctx, cfg, _quadratic_band_seed(ctx), cfg.max_iters - iterations
            )
            iterations += rescue_iters
            level_iters.append(rescue_iters)
            u, norm, polish_steps, polish_forced = _damped_newton(
                ctx, cfg, u, max(cfg.max_iters - iterations, 0), cfg.residual_tol
            )
            steps.extend(polish_steps)
            forced += polish_forced
            iterations += len(polish_steps)
            level_iters.append(len(polish_steps))
            if norm > before_rescue_norm:
                # rescue made things worse (it can, beyond its grid range);
                # keep the better iterate, the counters keep the true cost
                u, norm = before_rescue_u, before_rescue_norm

        residual = assemble_residual(ctx, u, prune=cfg.prune)
        norm = float(np.max(np.abs(residual)))

    u_out = normalize_mean_zero(u)
    u_out.setflags(write=False)
    raw = np.array(u, dtype=float)
    raw.setflags(write=False)
    return SolutionVector(
        u=u_out,
        raw_v=raw,
        grids=grids,
        iterations=iterations,
        final_residual_norm=norm,
        converged=bool(norm <= cfg.residual_tol),
        step_sizes=tuple(steps),
        forced_full_steps=forced,
        stage_iterations=tuple(level_iters),
        seeded_start=seeded,
    )
