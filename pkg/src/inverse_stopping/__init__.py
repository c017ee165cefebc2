"""Inverse optimal stopping for one-dimensional diffusions.

Transfers that implement a given cut-off barrier, optimal boundaries from
the reflected integral equation, and a lattice oracle to check both.
"""

__version__ = "0.1.0"

from .barrier import Barrier
from .boundary import (BoundarySolution, ResidualReport, SolverConfig, kjc_residual,
                       reflected_residual, solve_boundary, terminal_boundary)
from .model import (DiffusionSpec, PayoffSpec, Problem, check_single_crossing, generator_payoff,
                    make_problem)
from .oracle import (Lattice, ValueSurface, check_implementability, dp_value, extract_boundary,
                     reflection_cdf_check)
from .paths import NoiseStream, ReflectedPath, TimeGrid, brownian_increments, hitting_time, reflect
from .transfer import (MCConfig, TransferCurve, check_transfer_properties, closed_form_bm_transfer,
                       estimate_transfer_at, transfer_curve)

__all__ = [
    "Barrier", "BoundarySolution", "DiffusionSpec", "Lattice", "MCConfig", "NoiseStream",
    "PayoffSpec", "Problem", "ReflectedPath", "ResidualReport", "SolverConfig", "TimeGrid",
    "TransferCurve", "ValueSurface", "brownian_increments", "check_implementability",
    "check_single_crossing", "check_transfer_properties", "closed_form_bm_transfer",
    "dp_value", "estimate_transfer_at", "extract_boundary", "generator_payoff", "hitting_time",
    "kjc_residual", "make_problem", "reflect", "reflected_residual", "reflection_cdf_check",
    "solve_boundary", "terminal_boundary", "transfer_curve",
]
