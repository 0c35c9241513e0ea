"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, data errors
exit 2, and numerical failures exit 3.
"""


class ShapeError(ValueError):
    """Tensor dimensions do not satisfy an operation's contract."""


class ContractError(ValueError):
    """A non-shape precondition was violated (empty input, non-scalar loss, ...)."""


class LabelError(ValueError):
    """A class label is outside the valid range."""


class DegenerateBatchError(ValueError):
    """Batch statistics are requested for a batch too small to provide them."""


class DataError(Exception):
    """Base class for ingestion and dataset problems."""


class ParseError(DataError):
    """A data file contains a malformed row; carries the 1-based line number."""

    def __init__(self, message, line_number=None):
        super().__init__(message)
        self.line_number = line_number


class SchemaError(DataError):
    """A data file does not match the documented schema."""


class NonFiniteLossError(ArithmeticError):
    """Training produced a NaN or infinite loss; carries diagnostics."""

    def __init__(self, message, batch_index=None, components=None):
        super().__init__(message)
        self.batch_index = batch_index
        self.components = dict(components or {})


class UsageError(Exception):
    """Invalid command-line invocation."""
