import warnings

import numpy as np
import pytest

from ergodp.conjugate import DualCost
from ergodp.dp import solve_ergodic
from ergodp.grid import build_grid
from ergodp.model import load_example
from ergodp.operators import build_discrete_system

warnings.filterwarnings("ignore", message="explicit control transport")


@pytest.fixture(scope="session")
def case_study_reference():
    """Converged case-study solve at the published resolution.

    Shared by the acceptance tests (ergodic cost, duality, grid trend,
    Monte-Carlo) because the 150x150 solve is the expensive step.
    """
    import time

    spec = load_example("case_study_2d")
    g = build_grid(spec.x_lower, spec.x_upper, [150, 150])
    t0 = time.perf_counter()
    sys_ = build_discrete_system(spec, g, h=0.05, flux="sg", positivity="off")
    dc = DualCost(spec, g)
    sol = solve_ergodic(sys_, dc, tol=1e-6)
    wall = time.perf_counter() - t0
    return {"spec": spec, "grid": g, "sys": sys_, "dc": dc, "sol": sol, "wall": wall}


@pytest.fixture(scope="session")
def double_well_201():
    spec = load_example("double_well_1d")
    g = build_grid(spec.x_lower, spec.x_upper, [201])
    sys_ = build_discrete_system(spec, g, h=0.05, flux="upwind", positivity="off")
    return {"spec": spec, "grid": g, "sys": sys_, "dc": DualCost(spec, g)}


def analytic_double_well_masses(g):
    """Trapezoid masses of the closed-form double-well steady density."""
    x = g.nodes[:, 0]
    p = g.weights * np.exp((x**2 - x**4) / 4.0)
    return p / p.sum()
