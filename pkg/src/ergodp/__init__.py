"""Globally optimal feedback for stochastic nonlinear control.

Pipeline: parse a problem spec (drift, input map, stage cost, boxes,
diffusion), discretize the controlled Fokker-Planck operator on a tensor
grid, run the operator-theoretic dynamic programming recursion to the
ergodic limit, and validate the result with conservation, dissipation,
Bakry-Emery and Monte-Carlo checks.
"""

from . import analysis, conjugate, dp, fpk, grid, model, operators, sde  # noqa: F401
from .conjugate import DualCost, dual_argmin, dual_perspective, hamiltonian  # noqa: F401
from .dp import solve_ergodic, solve_finite_horizon, dp_step  # noqa: F401
from .grid import build_grid, interpolate  # noqa: F401
from .model import ExampleId, ProblemSpec, load_config, load_example, validate_spec  # noqa: F401
from .operators import apply_step, assemble_generator, build_discrete_system, discretize_time  # noqa: F401

__version__ = "0.1.0"
