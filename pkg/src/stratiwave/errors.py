"""Semantic exception hierarchy for the wave toolkit.

Every failure mode that a caller may want to branch on gets its own class.
The ``name`` attribute is the stable machine-readable identifier emitted by
the CLI on stderr (exit code 3).
"""


class StratiwaveError(Exception):
    """Base class for all toolkit errors."""

    name = "toolkit-error"


class DomainError(StratiwaveError):
    """Evaluation outside a function's domain, or invalid parameter region."""

    name = "domain-error"


class IterationFailureError(StratiwaveError):
    """A fixed-point iteration failed to converge; carries the last residual."""

    name = "iteration-failure"

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NoMinimumError(StratiwaveError):
    """Q(lambda) has no interior minimum (g = 0 makes it monotone)."""

    name = "no-minimum"


class UndefinedQuantityError(StratiwaveError):
    """A threshold quantity is undefined for the given data (e.g. g = 0)."""

    name = "undefined-quantity"


class LBViolatedError(StratiwaveError):
    """No dispersion sign change up to the lambda cap: local bifurcation
    condition not satisfied."""

    name = "lb-violated"


class MultiplicityExceededError(StratiwaveError):
    """More than one resonant wavenumber n >= 2 at lambda_*."""

    name = "multiplicity-exceeded"


class SuperpositionDegenerateError(StratiwaveError):
    """The zero-mode superposition denominator 1 - u2(0) vanished."""

    name = "superposition-degenerate"


class IndefiniteFormError(StratiwaveError):
    """The denominator quadratic form of the Rayleigh quotient is not
    positive definite (a + g*rho_p > 0 violated)."""

    name = "indefinite-form"


class RootNotFoundError(StratiwaveError):
    """A root search (Newton / bisection) failed."""

    name = "root-not-found"


class SingularSystemError(StratiwaveError):
    """A linear system needed for branch prediction is singular."""

    name = "singular-system"


class ShapeError(StratiwaveError):
    """Mismatched grids or array shapes between coupled objects."""

    name = "shape-error"


class EllipticityLossError(StratiwaveError):
    """h_p <= 0 somewhere: the height equation left the elliptic regime."""

    name = "ellipticity-loss"


class NewtonFailureError(StratiwaveError):
    """Newton's method on the height equation did not converge."""

    name = "newton-failure"

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConfigError(StratiwaveError):
    """Invalid or unparsable run configuration (CLI exit code 2)."""

    name = "config-error"


class VerificationError(StratiwaveError):
    """A stored solution failed one of the independent residual oracles."""

    name = "verification-failure"

    def __init__(self, message, check=None, value=None):
        super().__init__(message)
        self.check = check
        self.value = value
