"""Exception taxonomy shared by all modules.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
StructuralError and CapacityError -> 4, anything else -> 1.
"""


class PcError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PcError):
    """Invalid or inconsistent configuration."""


class DataError(PcError):
    """Malformed dataset/embedding files, shape mismatches, out-of-range values."""


class StructuralError(PcError):
    """A circuit violates a structural requirement of the requested operation."""


class CapacityError(PcError):
    """An enumeration-based oracle was asked to enumerate too large a space."""


class PreconditionError(PcError):
    """An operation was called with arguments violating its contract."""
