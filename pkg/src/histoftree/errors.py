"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems are raised by the parser
itself, ``DataError`` means bad input data (exit 2), anything else that
escapes is an internal failure (exit 3).
"""


class CapacityError(ValueError):
    """A requested partition would overflow the flat grid index."""


class DomainError(ValueError):
    """An input lies outside its promised domain (e.g. a label beyond [-M, M])."""


class DataError(ValueError):
    """User-supplied data could not be parsed or does not match expectations."""


class ConfigError(ValueError):
    """An experiment or fit configuration is inconsistent."""


class UnsupportedMechanismError(ValueError):
    """The privacy auditor only handles mechanisms with finite output atoms."""
