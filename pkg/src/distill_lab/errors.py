"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid experiment configuration (bad key, bad value, bad combination)."""


class NumericError(ArithmeticError):
    """A computation produced or received non-finite values."""


class UndefinedMetricError(ValueError):
    """A metric's denominator is empty, so the metric has no value."""
