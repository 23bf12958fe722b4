"""Shared fixtures: cached problem contexts and solver runs.

Solves and context builds repeat across test modules with identical inputs;
everything here is deterministic, so a session-scoped cache only trades
memory for wall time.  Contexts at the largest resolutions hold tables of
hundreds of megabytes and are deliberately not cached.
"""

from __future__ import annotations

import numpy as np
import pytest

from ot1d2d.benchmarks import make_problem
from ot1d2d.problems import build_grids
from ot1d2d.scheme import build_context
from ot1d2d.solver import SolverConfig, newton_solve

CACHE_CONTEXT_BELOW = 1024


@pytest.fixture(scope="session")
def benchmark_context():
    """benchmark_context(bench, n) -> (spec, grids, ctx), cached for modest n."""
    cache = {}

    def build(bench: str, n: int):
        key = (bench, n)
        if key not in cache:
            spec = make_problem(bench)
            grids = build_grids(spec.x_domain, spec.y_square, n)
            ctx = build_context(spec, grids)
            if n >= CACHE_CONTEXT_BELOW:
                return spec, grids, ctx
            cache[key] = (spec, grids, ctx)
        return cache[key]

    return build


@pytest.fixture(scope="session")
def benchmark_solve(benchmark_context):
    """benchmark_solve(bench, n, **cfg) -> (spec, grids, ctx, solution), cached."""
    cache = {}

    def solve(bench: str, n: int, **cfg_kwargs):
        guess = cfg_kwargs.get("initial_guess")
        if isinstance(guess, np.ndarray):  # unhashable; never worth caching
            spec, grids, ctx = benchmark_context(bench, n)
            return spec, grids, ctx, newton_solve(ctx, SolverConfig(**cfg_kwargs))
        key = (bench, n, tuple(sorted(cfg_kwargs.items())))
        if key not in cache:
            spec, grids, ctx = benchmark_context(bench, n)
            cache[key] = (spec, grids, ctx, newton_solve(ctx, SolverConfig(**cfg_kwargs)))
        return cache[key]

    return solve
