"""Error taxonomy shared by every module.

ValidationError covers bad inputs or configuration and maps to exit code 1;
NumericalError covers failures arising during computation (instability,
divergence, degenerate matrices) and maps to exit code 2.
"""


class ValidationError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass
