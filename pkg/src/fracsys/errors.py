"""Exception hierarchy shared by all modules.

Every error carries a short ``kind`` string so that the command-line front end
can emit a machine-readable report and pick an exit status without inspecting
messages.
"""
from __future__ import annotations


class FracsysError(Exception):
    """Base class for all library errors."""

    kind = "error"
    exit_code = 3

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "message": str(self)}
        out.update({k: v for k, v in self.details.items() if _jsonable(v)})
        return out


def _jsonable(value) -> bool:
    return isinstance(value, (int, float, str, bool, list, tuple, dict, type(None)))


class InvalidParameterError(FracsysError, ValueError):
    kind = "invalid-parameter"
    exit_code = 2


class ConfigError(FracsysError, ValueError):
    kind = "config"
    exit_code = 2


class MLOverflowError(FracsysError, OverflowError):
    """Raised when a Mittag-Leffler value exceeds the double range."""

    kind = "overflow"


class NumericError(FracsysError, ArithmeticError):
    kind = "numeric"


class NonConvergenceError(NumericError):
    kind = "non-convergence"


class InversionAccuracyError(NumericError):
    kind = "inversion-accuracy"


class UnreliableTransformError(NumericError):
    kind = "unreliable-transform"


class FitFailureError(NumericError):
    kind = "fit-failure"


class InsufficientDataError(NumericError):
    kind = "insufficient-data"


class PreconditionError(FracsysError):
    kind = "precondition"
    exit_code = 4


class EllipticityError(InvalidParameterError):
    kind = "ellipticity"
