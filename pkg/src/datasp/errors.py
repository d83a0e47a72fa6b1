"""Exception types shared across the package.

The CLI maps these onto exit codes: ValidationError -> 2,
NumericalError -> 3, VerificationError -> 4.
"""


class DataspError(Exception):
    """Base class for all package errors."""


class ValidationError(DataspError):
    """Malformed input: bad shapes, nonpositive costs, out-of-range ids."""


class GenerationError(DataspError):
    """Synthetic data generation could not satisfy its constraints."""


class NumericalError(DataspError):
    """Non-finite values encountered where finite ones are required."""


class VerificationError(DataspError):
    """A consistency check exceeded its tolerance."""


class EnumerationLimitError(ValidationError):
    """Walk enumeration would exceed the configured size guard."""


class NoPathError(DataspError):
    """A requested pair of nodes is not connected."""
