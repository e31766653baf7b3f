"""EV charging coordination for voltage control on radial distribution feeders."""
from .errors import (ConfigError, ContractError, DivergenceError, EvCoordError, InfeasibilityError, ModelError,
                     NumericalError)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "ContractError",
    "DivergenceError",
    "EvCoordError",
    "InfeasibilityError",
    "ModelError",
    "NumericalError",
]
