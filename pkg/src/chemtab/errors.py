"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to:
1 usage, 2 validation, 3 numerical failure.
"""

from __future__ import annotations


class ChemTabError(Exception):
    exit_code = 2


class UsageError(ChemTabError, ValueError):
    """Bad arguments to a library call or CLI subcommand."""

    exit_code = 1


class ValidationError(ChemTabError):
    """Input data or configuration failed a structural check."""

    exit_code = 2


class SchemaError(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class ShapeError(ValidationError, ValueError):
    pass


class IntegrityError(ValidationError):
    pass


class UnsupportedVersionError(ValidationError):
    pass


class NumericalError(ChemTabError):
    exit_code = 3


class SolverError(NumericalError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class TrainingError(NumericalError):
    pass


class LossError(NumericalError):
    pass
