"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: missing/unreadable input -> 2,
shape or dimension mismatch -> 3, numerical failure -> 4, usage -> 64.
"""


class BmimlError(Exception):
    """Base class for all package errors."""


class ParseError(BmimlError):
    """Malformed dataset or config file; carries location context in the message."""


class DimensionError(BmimlError):
    """Shape / dimension mismatch between arrays, bags, or model and data."""


class NumericalError(BmimlError):
    """Non-finite values or a failed numerical procedure."""


class SingularSystemError(NumericalError):
    """Linear system is singular and no regularization was supplied."""


class ModelFormatError(BmimlError):
    """Model container is corrupt, truncated, or has an unsupported version."""


class ConfigError(BmimlError):
    """Invalid configuration value or an unknown configuration key."""
