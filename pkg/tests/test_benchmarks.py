"""Built-in benchmark problems: data integrity and exact-solution identities."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import integrate

from ot1d2d.benchmarks import (
    BENCHMARK_IDS,
    MissingExactSolutionError,
    exact_error,
    make_problem,
)
from ot1d2d.problems import build_grids
from ot1d2d.scheme import build_context
from ot1d2d.solver import SolutionVector
from ot1d2d.verification import semi_discrete_oracle

E = float(np.e)
PI = float(np.pi)

# total transported mass per problem, in closed form
ANALYTIC_MASS = {
    "rectangular": E * E / 2.0 + 2.0 * E + 1.5,
    "vanishing": 64.0 / 9.0,
    "curved": PI * PI / 4.0,
}


def test_known_ids_build_and_unknown_ids_fail():
    for bench in BENCHMARK_IDS:
        assert make_problem(bench).name == bench
    with pytest.raises(ValueError, match="unknown benchmark"):
        make_problem("hexagonal")


def test_source_masses_match_closed_form():
    for bench in BENCHMARK_IDS:
        spec = make_problem(bench)
        mass, err = integrate.quad(
            lambda x: float(spec.f(np.asarray(x))), 0.0, 1.0, epsabs=1e-12
        )
        assert err < 1e-9
        assert mass == pytest.approx(ANALYTIC_MASS[bench], abs=1e-9)


def test_target_masses_match_closed_form():
    # integrate g over its support with exact section limits, so the
    # quadrature never crosses the density's jump to zero
    hi = (3.0 + E) / 2.0
    cases = {
        "rectangular": (
            lambda y2, y1: y1 + y2,
            0.0,
            hi,
            lambda y1: max(0.0, 1.0 - y1, y1 - 1.0),
            lambda y1: min(hi, 2.0 + E - y1, y1 + 1.0),
        ),
        "vanishing": (
            lambda y2, y1: (y1 + y2) * (2.0 - y1 - y2) * (4.0 - (y2 - y1) ** 2),
            -1.0,
            2.0,
            lambda y1: max(-y1, y1 - 2.0),
            lambda y1: min(2.0 - y1, y1 + 2.0),
        ),
        "curved": (
            lambda y2, y1: np.sqrt(1.0 - y1 * y1) - y2,
            -1.0,
            1.0,
            lambda y1: np.sqrt(1.0 - y1 * y1) - PI / 2.0,
            lambda y1: np.sqrt(1.0 - y1 * y1),
        ),
    }
    for bench, (integrand, lo, hi_, gfun, hfun) in cases.items():
        mass, err = integrate.dblquad(integrand, lo, hi_, gfun, hfun, epsabs=1e-10)
        assert mass == pytest.approx(ANALYTIC_MASS[bench], abs=1e-6), bench


def test_densities_nonnegative_and_nontrivial_on_support():
    # the vanishing target's quartic factor flips sign if either binomial is
    # written with the wrong sign; a dense sample guards that corner
    for bench in BENCHMARK_IDS:
        spec = make_problem(bench)
        side = np.linspace(spec.y_square.lo, spec.y_square.hi, 301)
        y1, y2 = np.meshgrid(side, side, indexing="ij")
        mask = np.asarray(spec.y_membership(y1, y2), dtype=bool)
        g = np.asarray(spec.g(y1, y2), dtype=float)
        assert (g[mask] >= 0.0).all(), bench
        assert g[mask].max() > 0.0, bench
        assert (g[~mask] == 0.0).all(), bench
        x = np.linspace(0.0, 1.0, 257)
        assert (np.asarray(spec.f(x)) >= 0.0).all(), bench


def test_exact_derivative_matches_exact_potential():
    for bench in BENCHMARK_IDS:
        spec = make_problem(bench)
        x = np.linspace(0.0, 1.0, 2001)
        du_fd = np.gradient(np.asarray(spec.exact_u(x), dtype=float), x)
        du = np.asarray(spec.exact_du(x), dtype=float)
        assert np.max(np.abs(du_fd[1:-1] - du[1:-1])) < 5e-6, bench


def test_exact_potentials_solve_the_transport_equation():
    """Independent route: at exact slopes, the target-side integral gives back f.

    The semi-discrete quadrature knows nothing about the x-grid scheme, so
    agreement here pins the problem data (cost, densities, exact potential)
    together.  Source nodes sit mid-domain, away from rows whose integration
    band crosses the support boundary.
    """
    second = {
        "rectangular": lambda x: np.exp(x),
        "vanishing": lambda x: 0.0 * np.asarray(x),
        "curved": lambda x: (PI**2 / 4.0) * np.cos(0.5 * PI * np.asarray(x)),
    }
    for bench in BENCHMARK_IDS:
        spec = make_problem(bench)
        for x in (0.3, 0.5, 0.7):
            du = float(spec.exact_du(np.asarray(x)))
            ddu = float(second[bench](x))
            f = float(spec.f(np.asarray(x)))
            val = semi_discrete_oracle(spec, x, du, ddu, m_fine=600)
            assert val == pytest.approx(f, rel=0.01), (bench, x, val, f)


def test_exact_error_is_shift_invariant(benchmark_context):
    spec, grids, _ = benchmark_context("rectangular", 64)
    u = np.asarray(spec.exact_u(grids.x_nodes), dtype=float)

    def wrap(vec):
        return SolutionVector(
            u=vec - vec.mean(),
            raw_v=vec,
            grids=grids,
            iterations=0,
            final_residual_norm=0.0,
            converged=True,
        )

    assert exact_error(wrap(u), spec) == pytest.approx(0.0, abs=1e-12)
    assert exact_error(wrap(u + 17.3), spec) == pytest.approx(0.0, abs=1e-11)
    bent = u.copy()
    bent[3] += 0.25
    # a single-node bump of size b recentres to (1 - 1/n) * b in max norm
    expected = 0.25 * (1.0 - 1.0 / u.size)
    assert exact_error(wrap(bent), spec) == pytest.approx(expected, rel=1e-6)


def test_missing_exact_solution_raises():
    spec = make_problem("rectangular")
    stripped = type(spec)(
        name=spec.name,
        x_domain=spec.x_domain,
        y_square=spec.y_square,
        y_membership=spec.y_membership,
        cost=spec.cost,
        f=spec.f,
        g=spec.g,
    )
    grids = build_grids(spec.x_domain, spec.y_square, 8)
    sol = SolutionVector(
        u=np.zeros(9),
        raw_v=np.zeros(9),
        grids=grids,
        iterations=0,
        final_residual_norm=0.0,
        converged=True,
    )
    with pytest.raises(MissingExactSolutionError):
        exact_error(sol, stripped)


def test_curved_cost_blows_up_only_off_support():
    # the mixed derivative diverges at the lateral edges; the membership
    # predicate keeps strictly inside, so context tables stay finite
    spec = make_problem("curved")
    grids = build_grids(spec.x_domain, spec.y_square, 128)
    ctx = build_context(spec, grids)
    assert np.isfinite(ctx.psi).all()
    assert np.isfinite(ctx.eps).all()
    assert np.isfinite(ctx.c_x).all()
