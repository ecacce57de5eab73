import numpy as np
import pytest

from competlab.fields import CoefficientSpec
from competlab.grid import Grid, GridState
from competlab.solver import BoundarySpec, SolveConfig, solve


def probe_state(fn, dim=2, h=1 / 32, L=1.0, spec=None, ncomp=None):
    """GridState of analytic fields (signed values allowed)."""
    g = Grid(dim, L, h)
    X = g.nodes()
    vals = fn(X)
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == dim:
        vals = vals[None]
    spec = spec or CoefficientSpec(dim=dim)
    return GridState(g, vals, spec, check=False)


@pytest.fixture(scope="session")
def small_sweep():
    """Coarse three-component family on a perturbed matrix, three decades."""
    cfg = SolveConfig(beta_schedule=(-1.0, -1e2, -1e4), h=1 / 24, ncomp=3,
                      boundary=BoundarySpec(third="bump"))
    spec = CoefficientSpec(dim=2, matrix_family="diagonal-smooth", eps=0.1)
    return solve(cfg, spec)


@pytest.fixture(scope="session")
def identity_sweep():
    cfg = SolveConfig(beta_schedule=(-1.0, -1e2, -1e3), h=1 / 24, ncomp=2)
    return solve(cfg, CoefficientSpec(dim=2))


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
