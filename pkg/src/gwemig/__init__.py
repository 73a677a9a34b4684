"""Supercritical Galton-Watson processes with i.i.d. emigration.

Simulation engines, analytic classification of extinction behaviour, exact
finite-horizon computations and Monte Carlo verification of limit laws.
"""
__version__ = "0.1.0"

from .laws import (
    DiscreteLaw, GenerationModel, make_law, const, pmf, pareto, example1,
    sample, tail, log_plus_moment, x_log_x_moment, gw_extinction_prob,
)
from .process import (
    ProcessConfig, Trajectory, step, renewal_step, simulate, decompose_step,
    ar_closed_form,
)
