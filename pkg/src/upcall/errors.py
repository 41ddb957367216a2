"""Exception hierarchy; the CLI maps each family to an exit code."""


class UpcallError(Exception):
    exit_code = 2


class DataError(UpcallError, ValueError):
    """Input data is missing, malformed or violates a precondition."""

    exit_code = 2


class NumericalError(UpcallError, ArithmeticError):
    """A computation hit a degenerate numerical configuration."""

    exit_code = 3
