"""Exception hierarchy.

Each class carries the CLI exit code it maps to.
"""


class HteError(Exception):
    exit_code = 1


class ConfigError(HteError, ValueError):
    """Invalid configuration or arguments."""

    exit_code = 2


class DataError(HteError, ValueError):
    """Input data is malformed or fails validation."""

    exit_code = 3


class SchemaError(DataError):
    """A mapped column is missing from the input file."""


class ParseError(DataError):
    """A cell could not be parsed as a finite real number."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DegeneracyError(HteError, ArithmeticError):
    """Numerical degeneracy: singular moments, zero variance, weight underflow."""

    exit_code = 4


class RankDeficiencyError(DegeneracyError):
    def __init__(self, message, matrix=None, condition=None):
        super().__init__(message)
        self.matrix = matrix
        self.condition = condition


class NumericalError(DegeneracyError):
    def __init__(self, message, lam=None, condition=None):
        super().__init__(message)
        self.lam = lam
        self.condition = condition


class CrossValidationError(DegeneracyError):
    pass


class IdentificationError(DegeneracyError):
    """The instrument carries no information about the treatment."""


class OracleFailure(HteError):
    """An analytical oracle check fell outside its tolerance."""

    exit_code = 1
