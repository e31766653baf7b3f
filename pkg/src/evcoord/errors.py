"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code it maps to.
"""


class EvCoordError(Exception):
    exit_code = 1


class ModelError(EvCoordError):
    """Malformed feeder: disconnected graph, duplicate line, bad slack count."""


class ConfigError(EvCoordError):
    """Invalid run configuration or input file."""


class ContractError(EvCoordError):
    """A caller violated an operation's precondition."""


class NumericalError(EvCoordError):
    exit_code = 2


class DivergenceError(NumericalError):
    def __init__(self, message, last_residual, iterations):
        super().__init__(message)
        self.last_residual = last_residual
        self.iterations = iterations


class InfeasibilityError(EvCoordError):
    exit_code = 3

    def __init__(self, message, vehicle_id=None):
        super().__init__(message)
        self.vehicle_id = vehicle_id
