"""Exception hierarchy. Each class maps to a CLI exit code."""


class SSQError(Exception):
    exit_code = 1


class ConfigError(SSQError, ValueError):
    exit_code = 2


class DataError(SSQError, ValueError):
    exit_code = 3


class NumericalError(SSQError, ArithmeticError):
    exit_code = 4


class ZeroDirectionError(NumericalError):
    """A dimension-reduction step produced only zero directions.

    The raw (unnormalized) coefficient matrix is kept on ``raw`` so callers
    can inspect what the solver returned.
    """

    def __init__(self, message, raw=None):
        super().__init__(message)
        self.raw = raw
