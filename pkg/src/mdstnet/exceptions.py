"""Exception hierarchy shared by every mdstnet module."""


class MDSTNetError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(MDSTNetError, ValueError):
    """Operand extents are incompatible."""


class NumericError(MDSTNetError, FloatingPointError):
    """A NaN or infinite value reached an operation that forbids it."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""


class ConfigError(MDSTNetError, ValueError):
    """Invalid hyperparameter or configuration value."""


class DataError(MDSTNetError, ValueError):
    """Dataset content violates an invariant (ordering, length, missingness)."""


class FormatError(MDSTNetError, OSError):
    """On-disk dataset does not match its manifest."""
