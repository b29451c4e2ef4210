"""Exception types shared across the package."""


class DyndrError(Exception):
    """Base class for all package errors."""


class SchemaError(DyndrError, ValueError):
    """Input data does not match the declared schema."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ConfigError(DyndrError, ValueError):
    """An option or argument is out of its valid range."""


class EstimationError(DyndrError, RuntimeError):
    """A fit or estimate could not be computed from the data at hand."""


class DegenerateResponseError(EstimationError):
    """A binary response takes only one value."""


class ConvergenceWarning(UserWarning):
    """A solver stopped at its iteration cap before meeting its tolerance."""
