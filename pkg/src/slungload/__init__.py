"""Planning and control for a quadrotor carrying a cable-suspended payload."""

from slungload.params import RotorGeometry, SystemParams, default_params, load_params, save_params
from slungload.dynamics import (
    ControlInput,
    ExternalForces,
    StateDerivative,
    SystemState,
    derivative,
    hover_state,
    nominal_derivative,
    normalize_state,
    rotor_forward,
    step_rk4,
)

__version__ = "0.1.0"

__all__ = [
    "ControlInput",
    "ExternalForces",
    "RotorGeometry",
    "StateDerivative",
    "SystemParams",
    "SystemState",
    "default_params",
    "derivative",
    "hover_state",
    "load_params",
    "nominal_derivative",
    "normalize_state",
    "rotor_forward",
    "save_params",
    "step_rk4",
]
