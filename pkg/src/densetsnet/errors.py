"""Exception taxonomy shared across the toolkit.

CLI exit-code mapping: ConfigError -> 2, DataError -> 3, NumericalError -> 4.
"""


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ToolkitError, ValueError):
    """Invalid configuration key, value, or combination."""


class DataError(ToolkitError, ValueError):
    """Input data violates a pipeline contract (pairing, format, domain)."""


class ShapeError(ToolkitError, ValueError):
    """Tensor shape or dimension mismatch; the message names the offending dim."""


class GraphError(ToolkitError, RuntimeError):
    """Misuse of the autodiff graph, e.g. backward from a non-scalar."""


class NumericalError(ToolkitError, ArithmeticError):
    """Non-finite values appeared, or a run was aborted numerically."""
