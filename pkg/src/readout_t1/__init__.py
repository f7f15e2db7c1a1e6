"""Qubit T1 under continuous dispersive readout: pointer states, emission
spectra, TLS baths, decay rates and a master-equation oracle."""

__version__ = "0.1.0"

from .bath import BathSpectrum, DecayTrace, TLSSpec, evaluate_bath
from .errors import (
    ConfigError,
    FitError,
    InsufficientDecayError,
    LevelingError,
    ReadoutT1Error,
    SimulationError,
)
from .pointer import DeviceParams, DriveSpec, PointerSolution, solve_pointer_states
from .rate import DecayPrediction, decay_rate, decay_rate_closed_form, decay_rate_quadrature
from .spectrum import QubitSpectrum, pole_decomposition

__all__ = [
    "BathSpectrum",
    "ConfigError",
    "DecayPrediction",
    "DecayTrace",
    "DeviceParams",
    "DriveSpec",
    "FitError",
    "InsufficientDecayError",
    "LevelingError",
    "PointerSolution",
    "QubitSpectrum",
    "ReadoutT1Error",
    "SimulationError",
    "TLSSpec",
    "decay_rate",
    "decay_rate_closed_form",
    "decay_rate_quadrature",
    "evaluate_bath",
    "pole_decomposition",
    "solve_pointer_states",
]
