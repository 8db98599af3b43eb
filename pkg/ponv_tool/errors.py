"""
Exception types raised by ponv_tool.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
StageError -> 4.
"""


class PonvError(Exception):
    """Base class for every error raised on purpose by this package."""
    exit_code = 1


class ConfigError(PonvError):
    """Invalid run configuration. `field` names the offending key."""
    exit_code = 2

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DataError(PonvError):
    exit_code = 3


class SchemaError(DataError):
    """The CSV header or the schema declaration itself is inconsistent."""

    def __init__(self, column, message):
        self.column = column
        super().__init__(f"{column}: {message}")


class ParseError(DataError):
    """A cell could not be converted to its declared kind."""

    def __init__(self, row, column, value):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}, column {column}: cannot parse {value!r}")


class RowRejection:
    """One rejected row: index in the file (0-based, header excluded), column and reason."""

    def __init__(self, row, column, reason):
        self.row = row
        self.column = column
        self.reason = reason

    def __repr__(self):
        return f"RowRejection(row={self.row}, column={self.column!r}, reason={self.reason!r})"


class RowRejectedError(DataError):
    """One or more rows violate hard validation rules (range, category set, missing target)."""

    def __init__(self, rejections):
        self.rejections = list(rejections)
        first = self.rejections[0]
        more = f" (+{len(self.rejections) - 1} more)" if len(self.rejections) > 1 else ""
        super().__init__(f"row {first.row} rejected, {first.column}: {first.reason}{more}")


class ContractError(PonvError, ValueError):
    """A caller broke an operation's precondition."""


class StageError(PonvError):
    """A CLI stage failed; earlier stages' artifacts are left in place."""
    exit_code = 4

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
