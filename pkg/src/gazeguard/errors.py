"""Exception hierarchy shared across the pipeline.

Each class maps onto one CLI exit code so commands can fail with a stable
status: configuration/argument problems exit 1, bad input data exits 2 and
numerical failures exit 3.
"""


class GazeGuardError(Exception):
    exit_code = 1


class ConfigError(GazeGuardError, ValueError):
    exit_code = 1


class DataError(GazeGuardError, ValueError):
    """Malformed or inconsistent input data (files, shapes, labels)."""

    exit_code = 2


class StructuralError(DataError):
    """Tensor shapes do not fit the layer graph."""


class StateError(GazeGuardError, RuntimeError):
    exit_code = 1


class NumericalError(GazeGuardError, ArithmeticError):
    """Non-finite values, divergence, or a covariance that lost definiteness."""

    exit_code = 3
