"""Relative Kahler-Ricci flows on model curves and their Bergman quantization."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .errors import BergflowError, ConfigError, InputError, NumericalError
from .geometry import EllipticCurve, EllipticFamily, P1Symmetric, Weight

__all__ = [
    "BergflowError",
    "ConfigError",
    "EllipticCurve",
    "EllipticFamily",
    "InputError",
    "NumericalError",
    "P1Symmetric",
    "Weight",
    "__version__",
]
