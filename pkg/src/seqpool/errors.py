"""Exception types shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, NumericalError -> 3.
"""


class ConfigError(ValueError):
    """Invalid experiment configuration, schedule, or file format."""


class ParameterError(ConfigError):
    """Model parameters violate a validity constraint (e.g. non-PD covariance)."""


class NumericalError(RuntimeError):
    """Fatal numerical degeneracy (all-zero weights, non-PSD covariance, ...)."""
