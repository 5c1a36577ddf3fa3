"""Exception hierarchy shared by the solver, gradient and CLI layers."""


class DelayLearnError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DelayLearnError, ValueError):
    """Inconsistent inputs: grid mismatch, off-grid data, tau below dt, bad config keys."""


class OutOfRangeError(DelayLearnError, ValueError):
    """A time query fell outside the solved interval."""


class BlowUpError(DelayLearnError, ArithmeticError):
    """A forward or adjoint solve produced a non-finite value."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class OracleError(DelayLearnError):
    """A finite-difference probe failed; ``perturbation`` names the offending one."""

    def __init__(self, message: str, perturbation: str | None = None):
        super().__init__(message)
        self.perturbation = perturbation


class FitError(DelayLearnError):
    """Training could not continue (persistent blow-up or non-finite gradient)."""
