"""Exception hierarchy.

Every error raised by the library derives from :class:`ManicoreError`.  The
``family`` attribute groups errors for the command-line exit codes:

* ``config``      -- the problem definition is unusable (exit 2)
* ``infeasible``  -- the constant ledger rules the method out (exit 3)
* ``numerical``   -- an iteration or numerical solve failed (exit 4)
* ``verification`` -- a check or certificate did not hold (exit 5)
"""

from __future__ import annotations

__all__ = [
    "ManicoreError",
    "ConfigError",
    "NonCleanSpectrum",
    "SingularBlock",
    "GapNotClosable",
    "InvalidNonlinearity",
    "InfeasibleConstants",
    "NoThreshold",
    "EpsilonTooLarge",
    "InsufficientSmoothness",
    "DomainEscape",
    "NotAContraction",
    "NoConvergence",
    "InversionFailure",
    "OutsideGamma0",
    "SingularPRho",
    "ResonantOrder",
    "PreconditionFailed",
    "ProjectionFailure",
    "VerificationFailed",
]


class ManicoreError(Exception):
    family = "numerical"


class ConfigError(ManicoreError):
    """Problem file violates the schema.  ``line`` is 1-based when known."""

    family = "config"

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NonCleanSpectrum(ManicoreError):
    family = "config"


class SingularBlock(ManicoreError):
    family = "config"


class GapNotClosable(ManicoreError):
    family = "config"


class InvalidNonlinearity(ManicoreError):
    family = "config"


class InfeasibleConstants(ManicoreError):
    """Raised when an operation needs a feasible ledger and did not get one.

    The ledger itself never raises; it records violations as values.
    """

    family = "infeasible"

    def __init__(self, violated: str):
        self.violated = violated
        super().__init__(violated)


class NoThreshold(ManicoreError):
    family = "infeasible"


class EpsilonTooLarge(ManicoreError):
    family = "infeasible"


class InsufficientSmoothness(ManicoreError):
    pass


class DomainEscape(ManicoreError):
    pass


class NotAContraction(ManicoreError):
    pass


class NoConvergence(ManicoreError):
    pass


class InversionFailure(ManicoreError):
    pass


class OutsideGamma0(ManicoreError):
    pass


class SingularPRho(ManicoreError):
    pass


class ResonantOrder(ManicoreError):
    def __init__(self, message: str, alpha: tuple[int, ...] | None = None):
        self.alpha = alpha
        super().__init__(message)


class PreconditionFailed(ManicoreError):
    family = "verification"


class ProjectionFailure(ManicoreError):
    pass


class VerificationFailed(ManicoreError):
    family = "verification"
