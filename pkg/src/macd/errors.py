"""Exception types shared across the package."""


class MacdError(Exception):
    """Base class for all package errors."""


class ParseError(MacdError, ValueError):
    """Malformed input file. ``line`` is 1-based, or None if not line-specific."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ValidationError(MacdError, ValueError):
    """Inputs are well-formed but inconsistent (shapes, ids, genes, config)."""


class NumericalError(MacdError, ArithmeticError):
    """Non-finite loss or gradient during training."""
