"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage errors exit 1,
data errors exit 2, numeric failures exit 3.
"""


class ContractViolation(ValueError):
    """An operation was called with arguments violating its contract."""


class UsageError(Exception):
    """Bad command line arguments or invalid configuration."""


class DataError(Exception):
    """Malformed or inconsistent input data."""


class NumericError(Exception):
    """Non-finite values encountered where finite ones are required."""
