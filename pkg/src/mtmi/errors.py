"""Exception types shared across the package."""


class MTMIError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(MTMIError, ValueError):
    """A data file does not conform to its CSV format.

    ``line`` is the 1-based line number of the offending row, or None when
    the problem is not tied to a single line (e.g. an empty file).
    """

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}: "
        super().__init__(where + message)


class ValidationError(MTMIError, ValueError):
    """A structural invariant of an in-memory object is violated."""


class DimensionMismatchError(MTMIError, ValueError):
    pass


class DegenerateInstanceError(MTMIError, ArithmeticError):
    """A vector that must have non-zero whitened norm has zero norm.

    Raised by ACE normalization when an instance coincides with the
    background mean, and by signature de-whitening for a zero input.
    """

    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)


class DegenerateUpdateError(MTMIError, ArithmeticError):
    """The unnormalized signature update has zero norm."""
