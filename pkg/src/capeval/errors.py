"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: input problems (format, data, load)
exit 2, undefined statistics exit 3.
"""


class CapevalError(Exception):
    """Base class for all toolkit errors."""


class FormatError(CapevalError):
    """A file does not match its declared on-disk format."""


class DataError(CapevalError):
    """Values are structurally valid but unusable (NaN, zero norm, missing ids)."""


class LoadError(CapevalError):
    """Referential-integrity or schema failure while loading; carries a line number."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:" if line is None else f"{path}:{line}:"
        super().__init__(f"{where} {message}" if where else message)


class UndefinedStatisticError(CapevalError):
    """A statistic is undefined for the given input (e.g. constant column)."""
