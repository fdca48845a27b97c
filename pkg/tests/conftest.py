import numpy as np
import pytest

from fofsparse import block_structure, build_design, make_basis, make_grid
from fofsparse.model import FunctionalSample


def random_problem(seed, n=5, G=10, M=8, L=None, d=4, noise=0.5):
    """Small random design problem with a smooth signal plus noise."""
    L = M if L is None else L
    rng = np.random.default_rng(seed)
    grid = make_grid((0.0, 1.0), G)
    bt = make_basis((0.0, 1.0), M, d)
    bs = make_basis((0.0, 1.0), L, d)
    X = rng.standard_normal((n, G)).cumsum(axis=1) / np.sqrt(G)
    Psi = rng.standard_normal((M, L))
    x = FunctionalSample(X, grid)
    signal = (X * grid.weights) @ bt(grid.points).T @ Psi @ bs(grid.points)
    y = FunctionalSample(signal + noise * rng.standard_normal((n, G)), grid)
    return build_design(x, y, bt, bs), block_structure(M, L, d)


@pytest.fixture
def small_problem():
    return random_problem(0)


# Acceptance criteria register (name, passed, detail) here; printed after the run.
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
