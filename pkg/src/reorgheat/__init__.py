"""Reorganised and conventional Born-Markov master equations for multi-bath heat
transport, with exact benchmarks (oscillator quadrature and HEOM)."""
from .bath import BathSpec, SpectralDensity, correlation_series, make_bath, rate
from .errors import ReorgHeatError, ValidationError
from .exact_osc import OscillatorSpec, exact_current
from .heom import HeomConfig, build_hierarchy, heom_current, heom_steady_state
from .master_eq import Coupling, Flavor, Reference, build_gkls, build_redfield, steady_state
from .models import oscillator_model, spin_boson_model
from .thermo import conventional_current, reorganised_current

__version__ = "0.1.0"

__all__ = [
    "BathSpec", "SpectralDensity", "correlation_series", "make_bath", "rate",
    "ReorgHeatError", "ValidationError", "OscillatorSpec", "exact_current",
    "HeomConfig", "build_hierarchy", "heom_current", "heom_steady_state",
    "Coupling", "Flavor", "Reference", "build_gkls", "build_redfield", "steady_state",
    "oscillator_model", "spin_boson_model", "conventional_current", "reorganised_current",
]
