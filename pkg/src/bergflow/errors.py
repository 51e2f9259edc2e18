"""Exception hierarchy shared by the numerical modules and the CLI."""


class BergflowError(Exception):
    """Base class for all package errors."""


class InputError(BergflowError, ValueError):
    """Rejected input: non-finite samples, mismatched grids, bad parameters."""


class ConfigError(BergflowError, ValueError):
    """Experiment configuration failed schema validation."""


class NumericalError(BergflowError, ArithmeticError):
    """A computation broke down: positivity loss, non-convergence, non-PD Gram."""

    def __init__(self, message, margin=None):
        super().__init__(message)
        self.margin = margin
