"""Problem data for 1D -> 2D transport: domains, costs, densities, grids.

A problem couples a source density f on an interval X with a target density
g supported on a subset Y of a square, through a smooth cost c(x, y).  The
solver needs c itself plus the mixed derivatives of c_x, so costs are
supplied as a bundle of closed-form evaluators rather than a single callable
that gets differentiated numerically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "Interval",
    "Square",
    "CostFunction",
    "ProblemSpec",
    "GridPair",
    "InvalidProblemError",
    "ValidationReport",
    "build_grids",
    "support_mask",
    "validate_problem",
]

# Evaluators broadcast over numpy arrays: (x, y1, y2) -> array.
Evaluator = Callable[..., np.ndarray]


class InvalidProblemError(ValueError):
    """Problem data is structurally unusable (non-finite cost data on the support)."""


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi] on the source line."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError("interval endpoints must be finite")
        if not self.lo < self.hi:
            raise ValueError(f"interval requires lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class Square:
    """Axis-aligned square [lo, hi] x [lo, hi] enclosing the target support."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError("square corners must be finite")
        if not self.lo < self.hi:
            raise ValueError(f"square requires lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class CostFunction:
    """Cost c(x, y1, y2) with the derivatives the scheme consumes.

    c_x is the x-partial; c_xx the second x-partial; c_xy1 and c_xy2 are the
    mixed partials of c_x in the two target coordinates.  All evaluators must
    accept broadcastable array arguments.
    """

    c: Evaluator
    c_x: Evaluator
    c_xx: Evaluator
    c_xy1: Evaluator
    c_xy2: Evaluator


@dataclass(frozen=True)
class ProblemSpec:
    """A complete transport problem, optionally with its exact potential."""

    name: str
    x_domain: Interval
    y_square: Square
    y_membership: Callable[[np.ndarray, np.ndarray], np.ndarray]
    cost: CostFunction
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    exact_u: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact_du: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclass(frozen=True)
class GridPair:
    """Matched 1D grid on X and square grid on Y.

    The y step is tied to the x step by h_y ~ h_x**(1/3): the y-integration
    error grows like h_x/h_y, so refining Y as fast as X would lose the
    balance between the two truncation terms.
    """

    n_x: int
    h_x: float
    x_nodes: np.ndarray  # shape (n_x + 1,)
    m_y: int
    h_y: float
    y_side: np.ndarray  # shape (m_y + 1,), one coordinate axis of the square
    y1: np.ndarray  # shape (m_y + 1, m_y + 1), first coordinate at each node
    y2: np.ndarray  # shape (m_y + 1, m_y + 1), second coordinate


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def build_grids(x_domain: Interval, y_square: Square, n_x: int) -> GridPair:
    """Uniform grids with the y step coupled to the cube root of the x step.

    The number of y cells is round(width / h_x**(1/3)), floored at 2 so the
    square always has an interior node.
    """
    if n_x < 2:
        raise ValueError(f"need at least 2 source cells, got n_x={n_x}")
    h_x = x_domain.width / n_x
    x_nodes = np.linspace(x_domain.lo, x_domain.hi, n_x + 1)

    target_step = h_x ** (1.0 / 3.0)
    m_y = max(2, round(y_square.width / target_step))
    h_y = y_square.width / m_y
    y_side = np.linspace(y_square.lo, y_square.hi, m_y + 1)
    y1, y2 = np.meshgrid(y_side, y_side, indexing="ij")

    return GridPair(
        n_x=n_x,
        h_x=h_x,
        x_nodes=_readonly(x_nodes),
        m_y=m_y,
        h_y=h_y,
        y_side=_readonly(y_side),
        y1=_readonly(y1),
        y2=_readonly(y2),
    )


def support_mask(spec: ProblemSpec, grids: GridPair) -> np.ndarray:
    """Boolean (m_y+1, m_y+1) array: True where the grid node lies in the target support."""
    mask = np.asarray(spec.y_membership(grids.y1, grids.y2), dtype=bool)
    if mask.shape != grids.y1.shape:
        raise ValueError(
            f"membership predicate returned shape {mask.shape}, expected {grids.y1.shape}"
        )
    return mask


@dataclass(frozen=True)
class ValidationReport:
    """Checks of the structural hypotheses the scheme relies on.

    mass_mismatch is |integral f - integral g| relative to integral f, both
    computed by composite trapezoid quadrature on refined grids.  failures
    lists human-readable labels for every check that did not pass; an empty
    tuple means the problem looks usable at this resolution.
    """

    min_mixed_norm: float
    min_f: float
    min_g_on_support: float
    max_g_on_support: float
    mass_f: float
    mass_g: float
    mass_mismatch: float
    failures: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.failures


def _trapezoid_mass_f(spec: ProblemSpec, n_cells: int) -> float:
    x = np.linspace(spec.x_domain.lo, spec.x_domain.hi, n_cells + 1)
    return float(np.trapezoid(np.asarray(spec.f(x), dtype=float), x))


def _trapezoid_mass_g(spec: ProblemSpec, m_cells: int) -> float:
    side = np.linspace(spec.y_square.lo, spec.y_square.hi, m_cells + 1)
    y1, y2 = np.meshgrid(side, side, indexing="ij")
    vals = np.asarray(spec.g(y1, y2), dtype=float)
    return float(np.trapezoid(np.trapezoid(vals, side, axis=1), side, axis=0))


def validate_problem(
    spec: ProblemSpec,
    grids: GridPair,
    mass_tol: float = 1e-2,
    mass_refine: int = 4,
) -> ValidationReport:
    """Check positivity, transversality, finiteness, and mass balance.

    Non-finite cost data at a masked node is an error (the scheme cannot be
    assembled at all); the remaining checks are reported as failures so the
    caller can decide how to proceed.  Mass quadrature runs on grids refined
    by mass_refine relative to the working grids.
    """
    mask = support_mask(spec, grids)
    if not mask.any():
        return ValidationReport(
            min_mixed_norm=np.nan,
            min_f=np.nan,
            min_g_on_support=np.nan,
            max_g_on_support=np.nan,
            mass_f=np.nan,
            mass_g=np.nan,
            mass_mismatch=np.nan,
            failures=("no grid node lies in the target support",),
        )
    jj, kk = np.nonzero(mask)
    y1m = grids.y1[jj, kk]
    y2m = grids.y2[jj, kk]

    evaluators = (
        ("c", spec.cost.c),
        ("c_x", spec.cost.c_x),
        ("c_xx", spec.cost.c_xx),
        ("c_xy1", spec.cost.c_xy1),
        ("c_xy2", spec.cost.c_xy2),
    )
    min_mixed = np.inf
    # Chunk the x nodes so the (n_x+1, n_masked) tables never get large.
    chunk = max(1, 2**20 // max(1, y1m.size))
    for start in range(0, grids.n_x + 1, chunk):
        xs = grids.x_nodes[start : start + chunk, None]
        vals = {}
        for label, ev in evaluators:
            v = np.broadcast_to(
                np.asarray(ev(xs, y1m[None, :], y2m[None, :]), dtype=float),
                (xs.shape[0], y1m.size),
            )
            bad = ~np.isfinite(v)
            if bad.any():
                i_off, m_off = np.argwhere(bad)[0]
                i = start + int(i_off)
                j, k = int(jj[m_off]), int(kk[m_off])
                raise InvalidProblemError(
                    f"cost evaluator {label} is not finite at "
                    f"x[{i}]={grids.x_nodes[i]:.6g}, "
                    f"y[{j},{k}]=({grids.y1[j, k]:.6g}, {grids.y2[j, k]:.6g})"
                )
            vals[label] = v
        mixed = np.hypot(vals["c_xy1"], vals["c_xy2"])
        min_mixed = min(min_mixed, float(mixed.min()))

    f_vals = np.asarray(spec.f(grids.x_nodes), dtype=float)
    if not np.isfinite(f_vals).all():
        i = int(np.argwhere(~np.isfinite(f_vals))[0][0])
        raise InvalidProblemError(
            f"source density f is not finite at x[{i}]={grids.x_nodes[i]:.6g}"
        )
    g_vals = np.asarray(spec.g(y1m, y2m), dtype=float)
    if not np.isfinite(g_vals).all():
        m_off = int(np.argwhere(~np.isfinite(g_vals))[0][0])
        j, k = int(jj[m_off]), int(kk[m_off])
        raise InvalidProblemError(
            f"target density g is not finite at "
            f"y[{j},{k}]=({grids.y1[j, k]:.6g}, {grids.y2[j, k]:.6g})"
        )

    mass_f = _trapezoid_mass_f(spec, mass_refine * grids.n_x)
    mass_g = _trapezoid_mass_g(spec, mass_refine * grids.m_y)
    mismatch = abs(mass_f - mass_g) / abs(mass_f) if mass_f != 0.0 else np.inf

    # min_f and the g range are reported, not flagged: benchmark densities may
    # legitimately vanish at domain edges.
    failures = []
    if not min_mixed > 0.0:
        failures.append("mixed cost derivative vanishes on the target support")
    if mismatch > mass_tol:
        failures.append(
            f"source and target masses differ by {mismatch:.3e} (tol {mass_tol:.3e})"
        )

    return ValidationReport(
        min_mixed_norm=min_mixed,
        min_f=float(f_vals.min()),
        min_g_on_support=float(g_vals.min()),
        max_g_on_support=float(g_vals.max()),
        mass_f=mass_f,
        mass_g=mass_g,
        mass_mismatch=mismatch,
        failures=tuple(failures),
    )
