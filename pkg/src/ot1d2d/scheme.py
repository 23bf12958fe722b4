"""Monotone finite-difference discretization of the 1D -> 2D transport equation.

At each interior source node x_i the scheme forms

    residual_i = -h_y^2 * sum_y (Dxx u_i + c_xx)^+ * psi * delta  +  f(x_i) + rho_int * u_i

where the sum runs over target-support grid nodes, delta is a variable-width
hat approximation of a line delta concentrated on {u'(x_i) + c_x(x_i, y) = 0},
and the one-sided differences feeding delta are combined so the whole residual
is non-decreasing in u_i and non-increasing in every other unknown.  The
rho-terms make the system strictly proper, which pins down the additive
constant of the potential and guarantees a unique discrete solution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .problems import GridPair, ProblemSpec, support_mask

__all__ = [
    "ContextBuildError",
    "SchemeContext",
    "TridiagonalMatrix",
    "build_context",
    "hat_delta",
    "monotone_delta",
    "centered_second_diff",
    "interior_residual",
    "boundary_residual",
    "residual_entry",
    "rows_residual",
    "assemble_residual",
    "assemble_generalized_jacobian",
]


class ContextBuildError(RuntimeError):
    """The scheme tables cannot be built from this problem/grid pairing."""


@dataclass(frozen=True)
class SchemeContext:
    """Precomputed tables for one problem on one grid pair.

    The 2D tables have shape (n_x + 1, n_masked): row i holds the values at
    source node x_i over the masked target nodes, flattened in the order given
    by (node_j, node_k).  Everything the residual and Jacobian need is here,
    so assembly never calls back into the cost evaluators.
    """

    spec: ProblemSpec
    grids: GridPair
    mask: np.ndarray  # (m_y+1, m_y+1) bool
    node_j: np.ndarray  # (n_masked,) first index of each masked node
    node_k: np.ndarray  # (n_masked,) second index
    y1m: np.ndarray  # (n_masked,) coordinates of masked nodes
    y2m: np.ndarray
    c_x: np.ndarray  # (n_x+1, n_masked)
    c_xx: np.ndarray
    psi: np.ndarray  # density times the ratio of the two transversality norms
    eps: np.ndarray  # hat half-width per (x, y) pair
    f_nodes: np.ndarray  # (n_x+1,)
    bc_inf_left: float  # inf over masked nodes of -c_x(x_0, y)
    bc_sup_right: float  # sup over masked nodes of -c_x(x_N, y)
    rho_int: float  # proper coefficient on interior rows: h_y^2 + h_x/h_y
    rho_bdy: float  # proper coefficient on boundary rows: h_x
    fixed_epsilon: bool = False

    @property
    def n_masked(self) -> int:
        return self.y1m.size


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _table(evaluator, label, x_col, y1m, y2m, grids, node_j, node_k) -> np.ndarray:
    shape = (x_col.size, y1m.size)
    vals = np.asarray(evaluator(x_col, y1m[None, :], y2m[None, :]), dtype=float)
    vals = np.ascontiguousarray(np.broadcast_to(vals, shape))
    bad = ~np.isfinite(vals)
    if bad.any():
        i, m = np.argwhere(bad)[0]
        j, k = int(node_j[m]), int(node_k[m])
        raise ContextBuildError(
            f"cost evaluator {label} is not finite at x[{int(i)}]={grids.x_nodes[i]:.6g}, "
            f"y[{j},{k}]=({grids.y1[j, k]:.6g}, {grids.y2[j, k]:.6g})"
        )
    return vals


def build_context(
    spec: ProblemSpec, grids: GridPair, *, fixed_epsilon: bool = False
) -> SchemeContext:
    """Evaluate cost data on the grids and freeze it into a SchemeContext.

    fixed_epsilon=True pins every hat width to h_y instead of scaling it with
    the local slope of c_x.  That under-resolves the delta wherever the level
    line crosses grid cells obliquely and is exposed only as a diagnostic
    (negative control for convergence checks).
    """
    mask = support_mask(spec, grids)
    if not mask.any():
        raise ContextBuildError("no grid node lies in the target support")
    node_j, node_k = np.nonzero(mask)
    y1m = grids.y1[node_j, node_k]
    y2m = grids.y2[node_j, node_k]
    x_col = grids.x_nodes[:, None]

    c_x = _table(spec.cost.c_x, "c_x", x_col, y1m, y2m, grids, node_j, node_k)
    c_xx = _table(spec.cost.c_xx, "c_xx", x_col, y1m, y2m, grids, node_j, node_k)
    c_xy1 = _table(spec.cost.c_xy1, "c_xy1", x_col, y1m, y2m, grids, node_j, node_k)
    c_xy2 = _table(spec.cost.c_xy2, "c_xy2", x_col, y1m, y2m, grids, node_j, node_k)

    # Transversality: the y-gradient of c_x must not vanish on the support,
    # otherwise the level line degenerates and the delta has no width to see.
    mixed_norm = np.sqrt(np.square(c_xy1) + np.square(c_xy2))
    if not (mixed_norm > 0.0).all():
        i, m = np.argwhere(~(mixed_norm > 0.0))[0]
        j, k = int(node_j[m]), int(node_k[m])
        raise ContextBuildError(
            f"y-gradient of c_x vanishes at x[{int(i)}]={grids.x_nodes[i]:.6g}, "
            f"y[{j},{k}]=({grids.y1[j, k]:.6g}, {grids.y2[j, k]:.6g})"
        )

    g_m = np.asarray(spec.g(y1m, y2m), dtype=float)
    if not np.isfinite(g_m).all():
        m = int(np.argwhere(~np.isfinite(g_m))[0][0])
        j, k = int(node_j[m]), int(node_k[m])
        raise ContextBuildError(
            f"target density g is not finite at y[{j},{k}]="
            f"({grids.y1[j, k]:.6g}, {grids.y2[j, k]:.6g})"
        )
    # With a 1D source, the norm weighting the delta and the transversality
    # norm are built from the same two mixed derivatives, so their ratio is 1
    # up to rounding and psi collapses to the density itself.
    psi = g_m[None, :] * (np.hypot(c_xy1, c_xy2) / mixed_norm)

    if fixed_epsilon:
        eps = np.full_like(c_x, grids.h_y)
    else:
        # Hat half-width: h_y per unit l1-slope of c_x in y, floored at h_y so
        # the hat always spans at least one cell, capped at the square width.
        eps = grids.h_y * np.maximum(np.abs(c_xy1) + np.abs(c_xy2), 1.0)
        np.minimum(eps, spec.y_square.width, out=eps)

    f_nodes = np.asarray(spec.f(grids.x_nodes), dtype=float)
    if not np.isfinite(f_nodes).all():
        i = int(np.argwhere(~np.isfinite(f_nodes))[0][0])
        raise ContextBuildError(
            f"source density f is not finite at x[{i}]={grids.x_nodes[i]:.6g}"
        )

    return SchemeContext(
        spec=spec,
        grids=grids,
        mask=_readonly(mask),
        node_j=_readonly(node_j),
        node_k=_readonly(node_k),
        y1m=_readonly(y1m),
        y2m=_readonly(y2m),
        c_x=_readonly(c_x),
        c_xx=_readonly(c_xx),
        psi=_readonly(psi),
        eps=_readonly(eps),
        f_nodes=_readonly(f_nodes),
        bc_inf_left=float(-c_x[0].max()),
        bc_sup_right=float(-c_x[-1].min()),
        rho_int=grids.h_y**2 + grids.h_x / grids.h_y,
        rho_bdy=grids.h_x,
        fixed_epsilon=fixed_epsilon,
    )


def hat_delta(offset, eps):
    """Hat approximation of a 1D delta: (1/eps) * max(1 - |offset|/eps, 0)."""
    offset = np.asarray(offset, dtype=float)
    return np.maximum(1.0 - np.abs(offset) / eps, 0.0) / eps


def monotone_delta(du_minus, du_plus, c_x, h_x, eps):
    """Hat delta fed by one-sided differences chosen for monotonicity.

    du_minus = u_i - u_{i-1} and du_plus = u_i - u_{i+1} (raw differences,
    not divided by h_x).  The argument of the hat is

        max( du_minus/h_x + c_x,  du_plus/h_x - c_x,  0 )

    which is non-decreasing in u_i and non-increasing in the neighbors, and
    collapses to |u'(x_i) + c_x| when u is linear.
    """
    backward = np.asarray(du_minus, dtype=float) / h_x + c_x
    forward = np.asarray(du_plus, dtype=float) / h_x - c_x
    inner = np.maximum(np.maximum(backward, forward), 0.0)
    return np.maximum(1.0 - inner / eps, 0.0) / eps


def centered_second_diff(u_prev, u_center, u_next, h_x):
    """Three-point second difference, grouped to limit cancellation."""
    return ((u_prev - u_center) + (u_next - u_center)) / (h_x * h_x)


@dataclass(frozen=True)
class TridiagonalMatrix:
    """Tridiagonal matrix stored as three length-n diagonals.

    Row i is (sub[i], diag[i], sup[i]) acting on (v[i-1], v[i], v[i+1]);
    sub[0] and sup[-1] are structural zeros.
    """

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray

    def __post_init__(self) -> None:
        if not (self.sub.shape == self.diag.shape == self.sup.shape):
            raise ValueError("diagonals must share one shape")
        if self.diag.ndim != 1 or self.diag.size < 2:
            raise ValueError("need 1D diagonals of length >= 2")
        if self.sub[0] != 0.0 or self.sup[-1] != 0.0:
            raise ValueError("sub[0] and sup[-1] must be structural zeros")

    @property
    def size(self) -> int:
        return self.diag.size

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        out = self.diag * v
        out[1:] += self.sub[1:] * v[:-1]
        out[:-1] += self.sup[:-1] * v[1:]
        return out

    def to_dense(self) -> np.ndarray:
        n = self.size
        dense = np.zeros((n, n))
        idx = np.arange(n)
        dense[idx, idx] = self.diag
        dense[idx[1:], idx[:-1]] = self.sub[1:]
        dense[idx[:-1], idx[1:]] = self.sup[:-1]
        return dense


def _check_u(ctx: SchemeContext, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    n = ctx.grids.n_x + 1
    if u.shape != (n,):
        raise ValueError(f"expected u of shape ({n},), got {u.shape}")
    return u


RowSel = Union[np.ndarray, slice]


def _differences(u: np.ndarray, idx: np.ndarray, h_x: float):
    du_m = u[idx] - u[idx - 1]
    du_p = u[idx] - u[idx + 1]
    dxx = centered_second_diff(u[idx - 1], u[idx], u[idx + 1], h_x)
    return du_m, du_p, dxx


def _kept_entries(ctx: SchemeContext, idx: np.ndarray, sel: RowSel, du_m, du_p):
    """Indices (r, m) of table entries whose hat can be active.

    A node is certifiably inactive when |c_x| exceeds eps plus the largest
    one-sided slope of u at the row: the hat argument is then > eps whatever
    branch wins, so delta and its generalized derivatives all vanish.
    """
    h = ctx.grids.h_x
    slope = np.maximum(np.abs(du_m), np.abs(du_p))[:, None] / h
    keep = np.abs(ctx.c_x[sel]) <= ctx.eps[sel] + slope
    return np.nonzero(keep)


def _interior_sum(
    ctx: SchemeContext,
    u: np.ndarray,
    idx: np.ndarray,
    sel: RowSel,
    prune: bool,
) -> np.ndarray:
    """sum_y (Dxx u + c_xx)^+ * psi * delta for each row in idx."""
    h = ctx.grids.h_x
    du_m, du_p, dxx = _differences(u, idx, h)
    if prune:
        r, m = _kept_entries(ctx, idx, sel, du_m, du_p)
        if r.size == 0:
            return np.zeros(idx.size)
        rows = idx[r]
        delta = monotone_delta(du_m[r], du_p[r], ctx.c_x[rows, m], h, ctx.eps[rows, m])
        pos = np.maximum(dxx[r] + ctx.c_xx[rows, m], 0.0)
        vals = pos * ctx.psi[rows, m] * delta
        return np.bincount(r, weights=vals, minlength=idx.size)
    delta = monotone_delta(du_m[:, None], du_p[:, None], ctx.c_x[sel], h, ctx.eps[sel])
    pos = np.maximum(dxx[:, None] + ctx.c_xx[sel], 0.0)
    return np.einsum("rm,rm,rm->r", pos, ctx.psi[sel], delta)


def interior_residual(ctx: SchemeContext, u, i: int, prune: bool = False) -> float:
    """Residual entry at interior node i (1 <= i <= n_x - 1)."""
    u = _check_u(ctx, u)
    n = ctx.grids.n_x
    if not 1 <= i <= n - 1:
        raise ValueError(f"interior index must be in [1, {n - 1}], got {i}")
    idx = np.array([i])
    s = _interior_sum(ctx, u, idx, idx, prune)[0]
    return float(
        -ctx.grids.h_y**2 * s + ctx.f_nodes[i] + ctx.rho_int * u[i]
    )


def boundary_residual(ctx: SchemeContext, u, side: str) -> float:
    """One-sided boundary rows pinning u' to the extremal slopes of -c_x."""
    u = _check_u(ctx, u)
    h = ctx.grids.h_x
    if side == "left":
        return float(-(u[1] - u[0]) / h + ctx.bc_inf_left + ctx.rho_bdy * u[0])
    if side == "right":
        return float((u[-1] - u[-2]) / h - ctx.bc_sup_right + ctx.rho_bdy * u[-1])
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def residual_entry(ctx: SchemeContext, u, i: int, prune: bool = False) -> float:
    """Residual at any node: boundary rows at the ends, delta rows inside."""
    n = ctx.grids.n_x
    if i == 0:
        return boundary_residual(ctx, u, "left")
    if i == n:
        return boundary_residual(ctx, u, "right")
    return interior_residual(ctx, u, i, prune=prune)


def rows_residual(ctx: SchemeContext, u, rows, prune: bool = False) -> np.ndarray:
    """Interior residual entries for several rows in one vectorized pass.

    Evaluates exactly what assemble_residual would put at those indices
    without touching the rest of the vector, which keeps row-local probes
    (monotonicity sweeps, single-row bisection in tests) linear in the
    number of rows probed instead of in the grid size.
    """
    u = _check_u(ctx, u)
    rows = np.asarray(rows, dtype=np.intp)
    n = ctx.grids.n_x
    if rows.size and not (1 <= rows.min() and rows.max() <= n - 1):
        raise ValueError(f"row indices must be in [1, {n - 1}]")
    s = _interior_sum(ctx, u, rows, rows, prune)
    return -ctx.grids.h_y**2 * s + ctx.f_nodes[rows] + ctx.rho_int * u[rows]


def assemble_residual(ctx: SchemeContext, u, prune: bool = False) -> np.ndarray:
    """Full residual vector over all n_x + 1 nodes."""
    u = _check_u(ctx, u)
    n = ctx.grids.n_x
    res = np.empty(n + 1)
    res[0] = boundary_residual(ctx, u, "left")
    res[n] = boundary_residual(ctx, u, "right")
    if n >= 2:
        idx = np.arange(1, n)
        s = _interior_sum(ctx, u, idx, slice(1, n), prune)
        res[1:n] = -ctx.grids.h_y**2 * s + ctx.f_nodes[1:n] + ctx.rho_int * u[1:n]
    return res


def _interior_jacobian(
    ctx: SchemeContext,
    u: np.ndarray,
    idx: np.ndarray,
    sel: RowSel,
    prune: bool,
):
    """Per-row derivatives of the interior residual w.r.t. (u_{i-1}, u_i, u_{i+1}).

    Kinks are resolved deterministically: the positive part contributes slope
    0 at its kink, the hat's outer kink takes the sloped piece, and ties in
    the inner max prefer the backward branch, then the forward one, then 0.
    """
    h = ctx.grids.h_x
    hy2 = ctx.grids.h_y**2
    du_m, du_p, dxx = _differences(u, idx, h)

    def banded(cx, cxx, psi, eps, dm, dp, ddxx):
        backward = dm / h + cx
        forward = dp / h - cx
        inner = np.maximum(np.maximum(backward, forward), 0.0)
        slack = 1.0 - inner / eps
        delta = np.maximum(slack, 0.0) / eps
        curv = ddxx + cxx
        pos = np.maximum(curv, 0.0)
        pmask = curv > 0.0
        outer = slack >= 0.0
        br_back = (backward >= forward) & (backward >= 0.0)
        br_fwd = (~br_back) & (forward >= 0.0)
        d_curv = pmask / (h * h)
        d_hat = outer / np.square(eps) / h
        t_sub = psi * (delta * d_curv + pos * d_hat * br_back)
        t_sup = psi * (delta * d_curv + pos * d_hat * br_fwd)
        t_diag = psi * (-2.0 * delta * d_curv - pos * d_hat * (br_back | br_fwd))
        return t_sub, t_diag, t_sup

    if prune:
        r, m = _kept_entries(ctx, idx, sel, du_m, du_p)
        if r.size == 0:
            z = np.zeros(idx.size)
            return z, z.copy(), z.copy()
        rows = idx[r]
        t_sub, t_diag, t_sup = banded(
            ctx.c_x[rows, m],
            ctx.c_xx[rows, m],
            ctx.psi[rows, m],
            ctx.eps[rows, m],
            du_m[r],
            du_p[r],
            dxx[r],
        )
        j_sub = np.bincount(r, weights=t_sub, minlength=idx.size)
        j_diag = np.bincount(r, weights=t_diag, minlength=idx.size)
        j_sup = np.bincount(r, weights=t_sup, minlength=idx.size)
    else:
        t_sub, t_diag, t_sup = banded(
            ctx.c_x[sel],
            ctx.c_xx[sel],
            ctx.psi[sel],
            ctx.eps[sel],
            du_m[:, None],
            du_p[:, None],
            dxx[:, None],
        )
        j_sub = t_sub.sum(axis=1)
        j_diag = t_diag.sum(axis=1)
        j_sup = t_sup.sum(axis=1)
    return -hy2 * j_sub, -hy2 * j_diag, -hy2 * j_sup


def assemble_generalized_jacobian(
    ctx: SchemeContext, u, prune: bool = False
) -> TridiagonalMatrix:
    """One element of the generalized Jacobian of assemble_residual at u.

    By construction the result is an M-matrix candidate: off-diagonals are
    <= 0 and each diagonal entry exceeds the row's off-diagonal mass by the
    proper coefficient, so the Newton systems are uniquely solvable.
    """
    u = _check_u(ctx, u)
    n = ctx.grids.n_x
    h = ctx.grids.h_x
    sub = np.zeros(n + 1)
    diag = np.empty(n + 1)
    sup = np.zeros(n + 1)
    diag[0] = 1.0 / h + ctx.rho_bdy
    sup[0] = -1.0 / h
    diag[n] = 1.0 / h + ctx.rho_bdy
    sub[n] = -1.0 / h
    if n >= 2:
        idx = np.arange(1, n)
        j_sub, j_diag, j_sup = _interior_jacobian(ctx, u, idx, slice(1, n), prune)
        sub[1:n] = j_sub
        diag[1:n] = j_diag + ctx.rho_int
        sup[1:n] = j_sup
    return TridiagonalMatrix(sub=sub, diag=diag, sup=sup)
