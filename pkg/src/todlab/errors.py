"""Exception hierarchy shared by every module."""


class TodlabError(Exception):
    """Base class for all library errors."""


class ConfigurationError(TodlabError, ValueError):
    """Invalid spec, config, or incompatible objects."""


class ShapeError(TodlabError, ValueError):
    """Input dimensions do not match the network or dataset."""


class NumericError(TodlabError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class ArgumentError(TodlabError, ValueError):
    """Argument outside its documented domain (empty sets, zero budgets...)."""


class IndexRangeError(TodlabError, IndexError):
    """Sample index outside the dataset."""


class ParseError(TodlabError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
