"""Exception hierarchy.

Precondition failures derive from :class:`ValueError`; numerical failures
derive from :class:`ArithmeticError`.  The CLI maps the first family to exit
code 2 and the second to exit code 3.
"""


class SheathError(Exception):
    """Base class for every error raised by sheathlab."""


class PreconditionError(SheathError, ValueError):
    """Inputs violate a documented precondition."""


class NumericalError(SheathError, ArithmeticError):
    """A numerical procedure failed on admissible inputs."""


class BranchExhausted(PreconditionError):
    """Potential lies below the minimum of f on the equilibrium branch."""


class RefusedNoSheath(PreconditionError):
    """The boundary-value problem has no monotone stationary solution."""


class WindowTooShort(PreconditionError):
    """The spatial fit window contains too few nodes."""


class FitUnderdetermined(PreconditionError):
    """Fewer than the minimum number of usable points in a decay fit."""


class NumericalBranchFailure(NumericalError):
    """Sagdeev potential became negative while integrating the profile."""


class NoConvergence(NumericalError):
    """Newton iteration stagnated."""


class CharacteristicViolation(NumericalError):
    """Some characteristic speed became non-negative at the wall."""

    def __init__(self, message, index=None, speed=None):
        super().__init__(message)
        self.index = index
        self.speed = speed


class NonFiniteState(NumericalError):
    """A field or intermediate quantity became NaN or infinite."""
