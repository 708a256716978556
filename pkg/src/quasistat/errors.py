"""Exception hierarchy shared by every module in the package."""


class QuasistatError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(QuasistatError, ValueError):
    """Malformed input: bad rates, bad distributions, bad parameters."""


class ComputationError(QuasistatError, RuntimeError):
    """A numerical routine could not produce a trustworthy answer."""


class NonConvergenceError(ComputationError):
    """Iteration hit its budget before stabilizing.

    Carries the partial convergence history so callers can diagnose
    whether the window was too small or the tolerance too tight.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class DivergentMomentError(ComputationError):
    """An exponential moment or series is infinite at the requested rate."""


class CertificationError(ComputationError):
    """A certificate could not be assembled; names the failing constant."""

    def __init__(self, message, part=None):
        super().__init__(message)
        self.part = part
