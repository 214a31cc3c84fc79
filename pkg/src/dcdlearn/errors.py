"""Exception hierarchy shared by every stage.

The CLI maps these onto exit codes: usage/config errors exit 1,
data/schema errors exit 2 and numerical aborts exit 3.
"""


class DcdlError(Exception):
    exit_code = 1


class UsageError(DcdlError):
    exit_code = 1


class ConfigError(DcdlError):
    exit_code = 1


class ShapeError(DcdlError, ValueError):
    exit_code = 1


class DataError(DcdlError):
    exit_code = 2


class SchemaError(DataError):
    exit_code = 2


class ParseError(SchemaError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class LoadError(DataError):
    exit_code = 2


class NumericalError(DcdlError, ArithmeticError):
    exit_code = 3
