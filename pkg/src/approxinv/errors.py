"""Exception hierarchy for approxinv."""


class ApproxInvError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(ApproxInvError, ValueError):
    pass


class NotPositiveDefinite(ApproxInvError, ValueError):
    pass


class ZeroVectorError(ApproxInvError, ValueError):
    pass


class MissingMetadata(ApproxInvError):
    pass


class SpectralGapError(ApproxInvError, ValueError):
    """The eigenvalue gap is too small (or undefined) for the theory to apply."""


class PreconditionError(ApproxInvError, ValueError):
    """An iterate violates normalization or lies at/above the gap edge."""


class FixedPointReached(ApproxInvError):
    """The correction vanished: the iterate is already an eigenvector."""


class CGNotCertified(ApproxInvError):
    """Truncated CG hit its iteration cap before meeting the accuracy budget."""

    def __init__(self, message, best_eta, iterations):
        super().__init__(message)
        self.best_eta = best_eta
        self.iterations = iterations


class StepError(ApproxInvError):
    """Wraps an error raised inside the outer loop, tagged with the step index."""

    def __init__(self, k, cause):
        super().__init__(f"step {k}: {cause}")
        self.k = k
        self.cause = cause
