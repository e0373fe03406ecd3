"""Exception types shared across the toolkit.

The CLI maps these onto process exit codes: configuration problems exit
with 2, infeasible measurement geometry with 3, numerical failures with 4.
"""


class BcdiError(Exception):
    """Base class for toolkit errors."""


class ConfigError(BcdiError):
    """Invalid or unparseable experiment configuration."""


class GeometryError(BcdiError):
    """Measurement geometry that cannot produce a valid experiment."""


class NyquistError(GeometryError):
    """Scatterer too large for its simulation array (autocorrelation wraps)."""


class NumericalError(BcdiError):
    """Non-finite data or a numerically failed computation."""
