"""Built-in transport problems with known exact potentials.

Three targets of increasing geometric difficulty, all fed from x in [0, 1]:

* ``rectangular`` -- quadratic cost onto a rotated rectangle, smooth density.
* ``vanishing``   -- quadratic cost onto a diamond whose density vanishes on
  the whole support boundary; the exact potential is identically zero.
* ``curved``      -- linear-in-x cost onto a strip under the unit circle; the
  cost's mixed derivative blows up toward the strip's lateral edges, so the
  support predicate keeps strictly inside them.
"""

from __future__ import annotations

import numpy as np

from .problems import CostFunction, Interval, ProblemSpec, Square

__all__ = [
    "BENCHMARK_IDS",
    "MissingExactSolutionError",
    "make_problem",
    "exact_error",
]

BENCHMARK_IDS = ("rectangular", "vanishing", "curved")

_E = float(np.e)
_PI = float(np.pi)


class MissingExactSolutionError(LookupError):
    """The requested quantity needs an exact potential the problem does not carry."""


def _const_evaluator(value: float):
    def evaluate(x, y1, y2):
        shape = np.broadcast_shapes(np.shape(x), np.shape(y1), np.shape(y2))
        return np.full(shape, value)

    return evaluate


def _zeros_like_x(x):
    return np.zeros(np.shape(x))


def _rectangular() -> ProblemSpec:
    # Target: 1 <= y1+y2 <= e+2, |y2-y1| <= 1, density g = y1+y2.
    def member(y1, y2):
        s = y1 + y2
        t = y2 - y1
        return (s >= 1.0) & (s <= _E + 2.0) & (t >= -1.0) & (t <= 1.0)

    def g(y1, y2):
        return np.where(member(y1, y2), y1 + y2, 0.0)

    cost = CostFunction(
        c=lambda x, y1, y2: 0.5 * (x - y1) ** 2 + 0.5 * (x - y2) ** 2,
        c_x=lambda x, y1, y2: 2.0 * x - y1 - y2,
        c_xx=_const_evaluator(2.0),
        c_xy1=_const_evaluator(-1.0),
        c_xy2=_const_evaluator(-1.0),
    )
    return ProblemSpec(
        name="rectangular",
        x_domain=Interval(0.0, 1.0),
        # Bounding box of the rotated rectangle is already the square [0, (3+e)/2]^2.
        y_square=Square(0.0, (3.0 + _E) / 2.0),
        y_membership=member,
        cost=cost,
        f=lambda x: (np.exp(x) + 2.0) * (np.exp(x) + 2.0 * x),
        g=g,
        exact_u=lambda x: np.exp(x) - _E + 1.0,
        exact_du=np.exp,
    )


def _vanishing() -> ProblemSpec:
    # Diamond 0 <= y1+y2 <= 2, |y2-y1| <= 2; g vanishes on all four edges.
    def member(y1, y2):
        s = y1 + y2
        t = y2 - y1
        return (s >= 0.0) & (s <= 2.0) & (t >= -2.0) & (t <= 2.0)

    def g(y1, y2):
        s = y1 + y2
        t = y2 - y1
        return np.where(member(y1, y2), s * (2.0 - s) * (4.0 - t * t), 0.0)

    cost = CostFunction(
        c=lambda x, y1, y2: 0.5 * (x - y1) ** 2 + 0.5 * (x - y2) ** 2,
        c_x=lambda x, y1, y2: 2.0 * x - y1 - y2,
        c_xx=_const_evaluator(2.0),
        c_xy1=_const_evaluator(-1.0),
        c_xy2=_const_evaluator(-1.0),
    )
    return ProblemSpec(
        name="vanishing",
        x_domain=Interval(0.0, 1.0),
        y_square=Square(-1.0, 2.0),
        y_membership=member,
        cost=cost,
        f=lambda x: (128.0 / 3.0) * x * (1.0 - x),
        g=g,
        exact_u=_zeros_like_x,
        exact_du=_zeros_like_x,
    )


def _circle_height(y1):
    """Height sqrt(1 - y1^2) of the unit circle, clamped to 0 outside |y1| <= 1."""
    return np.sqrt(np.maximum(1.0 - np.square(np.asarray(y1, dtype=float)), 0.0))


def _curved() -> ProblemSpec:
    # Strip of depth pi/2 hanging below the arc y2 = sqrt(1 - y1^2).  The
    # lateral edges y1 = +-1 are excluded: the cost's mixed derivative in y1
    # diverges there, and the edges carry no mass.
    def member(y1, y2):
        y1 = np.asarray(y1, dtype=float)
        inside = 1.0 - np.square(y1) > 0.0
        w = _circle_height(y1) - np.asarray(y2, dtype=float)
        return inside & (w >= 0.0) & (w <= _PI / 2.0)

    def g(y1, y2):
        w = _circle_height(y1) - np.asarray(y2, dtype=float)
        return np.where(member(y1, y2), w, 0.0)

    def c(x, y1, y2):
        return np.asarray(x, dtype=float) * (np.asarray(y2, dtype=float) - _circle_height(y1))

    def c_x(x, y1, y2):
        depth = np.asarray(y2, dtype=float) - _circle_height(y1)
        return depth + 0.0 * np.asarray(x, dtype=float)

    def c_xy1(x, y1, y2):
        y1 = np.asarray(y1, dtype=float)
        r = np.maximum(1.0 - np.square(y1), 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = y1 / np.sqrt(r)
        return slope + 0.0 * np.asarray(x, dtype=float)

    cost = CostFunction(
        c=c,
        c_x=c_x,
        c_xx=_const_evaluator(0.0),
        c_xy1=c_xy1,
        c_xy2=_const_evaluator(1.0),
    )
    return ProblemSpec(
        name="curved",
        x_domain=Interval(0.0, 1.0),
        # Support bounding box is [-1, 1] x [-pi/2, 1]; the smallest square
        # sharing one coordinate range for both axes is [-pi/2, 1]^2.
        y_square=Square(-_PI / 2.0, 1.0),
        y_membership=member,
        cost=cost,
        f=lambda x: (_PI**3 / 8.0) * np.sin(_PI * np.asarray(x, dtype=float)),
        g=g,
        exact_u=lambda x: 2.0 / _PI - np.cos(0.5 * _PI * np.asarray(x, dtype=float)),
        exact_du=lambda x: 0.5 * _PI * np.sin(0.5 * _PI * np.asarray(x, dtype=float)),
    )


_FACTORIES = {
    "rectangular": _rectangular,
    "vanishing": _vanishing,
    "curved": _curved,
}


def make_problem(benchmark_id: str) -> ProblemSpec:
    """Build one of the named benchmark problems."""
    try:
        factory = _FACTORIES[benchmark_id]
    except KeyError:
        raise ValueError(
            f"unknown benchmark {benchmark_id!r}; choose from {BENCHMARK_IDS}"
        ) from None
    return factory()


def exact_error(sol, spec: ProblemSpec) -> float:
    """Max-norm distance between a computed potential and the exact one.

    Both are recentred to discrete mean zero over all nodes first, since the
    potential is only determined up to an additive constant.
    """
    if spec.exact_u is None:
        raise MissingExactSolutionError(
            f"problem {spec.name!r} carries no exact potential"
        )
    x = sol.grids.x_nodes
    u_num = np.asarray(sol.u, dtype=float)
    u_ref = np.asarray(spec.exact_u(x), dtype=float)
    u_num = u_num - u_num.mean()
    u_ref = u_ref - u_ref.mean()
    return float(np.max(np.abs(u_num - u_ref)))
