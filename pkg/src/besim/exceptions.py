"""Exception hierarchy shared across the package."""


class BesimError(Exception):
    """Base class for all package errors."""


class ContractError(BesimError, ValueError):
    """A precondition of an operation was violated (shapes, ranges, caches)."""


class DataError(BesimError, ValueError):
    """Malformed or inconsistent input data."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(BesimError, ValueError):
    """Unknown or invalid configuration value."""


class TrainingError(BesimError, FloatingPointError):
    """Numeric failure during optimisation (non-finite loss or gradient)."""


class SimulationError(BesimError, FloatingPointError):
    """A closed-loop simulation produced a non-finite state."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step
