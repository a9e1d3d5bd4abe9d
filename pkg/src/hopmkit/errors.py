"""Exception and warning types raised across the package."""


class HopmkitError(Exception):
    """Base class for all errors raised by hopmkit."""


class DimsMismatch(HopmkitError, ValueError):
    pass


class ZeroContraction(HopmkitError, ArithmeticError):
    """A partial contraction vanished, so the normalized update is undefined."""


class BadStart(HopmkitError, ValueError):
    """The starting guess has F^1(x0) = 0."""


class DegenerateBlock(HopmkitError, ArithmeticError):
    """A block subproblem is singular (zero factor or rank-deficient map)."""


class BadTensor(HopmkitError, ValueError):
    pass


class DimsTooLarge(HopmkitError, ValueError):
    pass


class NotMatrix(HopmkitError, ValueError):
    pass


class InsufficientData(HopmkitError, ValueError):
    pass


class NotConverged(HopmkitError, ValueError):
    pass


class ParseError(HopmkitError, ValueError):
    """Malformed numeric file. Carries the 1-based line and column."""

    def __init__(self, message, line=None, column=None, path=None):
        self.line = line
        self.column = column
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class SchemaError(HopmkitError, ValueError):
    """Malformed JSON-lines trace record."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class StabilityWarning(UserWarning):
    """Running minimum of sigma_k^mu fell below the stability threshold."""
