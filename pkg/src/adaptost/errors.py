"""Exception hierarchy shared across the package."""


class AdaptostError(Exception):
    """Base class for all package errors."""


class DomainError(AdaptostError, ValueError):
    """An argument is outside the domain of the operation."""


class StateError(AdaptostError, RuntimeError):
    """Inputs are inconsistent with the trial state (e.g. stage-2 data for a
    hypothesis already settled at stage 1, or missing stage-2 data)."""


class NumericError(AdaptostError, ArithmeticError):
    """A numerical routine failed to meet its tolerance.

    ``best_estimate`` carries the last estimate when one is available.
    """

    def __init__(self, message, best_estimate=None):
        super().__init__(message)
        self.best_estimate = best_estimate


class BracketError(NumericError):
    """A root bracket does not contain a sign change."""


class DecompositionError(NumericError):
    """A matrix factorization failed (non positive definite input)."""


class CalibrationError(NumericError):
    """A boundary/critical-value calibration equation has no solution."""


class DegenerateDesignError(DomainError):
    """A design quantity makes the requested computation undefined."""


class ConfigError(AdaptostError, ValueError):
    """Invalid or unknown configuration input."""
