"""Brownian semistationary processes: simulation, Wiener integrals, the
smooth-plus-rough decomposition, Ito formulas and verification suites."""

from .kernels import Custom, Gamma, KernelSpec, Power, check_assumption1
from .noise_sim import Constant, ExpOU, Ramp, SimGrid, certified_grid, drive, simulate_bss
from .wiener import IntegrandSpec, langevin_solve, wiener_integral
from .decomp import decompose
from .config import ExperimentConfig, parse_config

__all__ = ["Custom", "Gamma", "KernelSpec", "Power", "check_assumption1", "Constant", "ExpOU",
           "Ramp", "SimGrid", "certified_grid", "drive", "simulate_bss", "IntegrandSpec",
           "langevin_solve", "wiener_integral", "decompose", "ExperimentConfig", "parse_config"]
__version__ = "0.1.0"
