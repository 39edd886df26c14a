"""Spectral tools for periodic KdV around cnoidal waves."""

from .cnoidal import CnoidalWave, build_cnoidal
from .kdv_flow import SolverConfig, Trajectory, evolve_kdv, modified_flow
from .fourier_core import FourierField, l2_norm, sobolev_norm
from .harness import ExperimentRecord, ExperimentSpec, fit_growth, run_suite, run_superposition
from .normal_form import NFContext

__all__ = [
    "CnoidalWave", "build_cnoidal", "SolverConfig", "Trajectory", "evolve_kdv", "modified_flow",
    "FourierField", "l2_norm", "sobolev_norm", "ExperimentRecord", "ExperimentSpec", "fit_growth",
    "run_suite", "run_superposition", "NFContext",
]
