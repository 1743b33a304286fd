"""Minimum expected energy transmission over a decode-and-forward relay link
with causal CSI, a hard deadline and mutual-information accumulation."""

from .channel import (
    DistributionSpec,
    LinkDistributions,
    LinkSnrs,
    boundedness_report,
    exp_integral_e1,
    phi1,
    phi2,
    phi2_asymptote,
)
from .closed_form import K2Instance, k2_nmese, k2_value
from .dp import Grid, InnerSearch, SolverConfig, ValueTable, solve, terminal_power
from .errors import ConfigError, SimulationError, StateError
from .info import Phase, ResidualInfo, SystemState, mutual_info, mutual_info_inv, transition

__version__ = "0.1.0"
