"""Error and warning types raised by bwflow.

All errors derive from :class:`BwflowError`.  Input-contract violations
derive from :class:`ValidationError`; iterative procedures that fail to
reach their tolerance raise :class:`NonConvergenceError`.  The CLI maps
these to exit codes 2 and 3 respectively.
"""


class BwflowError(Exception):
    """Base class for all bwflow errors."""


class ValidationError(BwflowError, ValueError):
    """An input violates a documented precondition."""


class NonFiniteError(ValidationError):
    """An array contains NaN or infinity."""


class NonHermitianError(ValidationError):
    """A matrix is not Hermitian within tolerance."""


class NotPsdError(ValidationError):
    """A matrix has an eigenvalue below the negative tolerance."""


class DimMismatchError(ValidationError):
    """Operands have incompatible dimensions."""


class KernelNestingError(ValidationError):
    """Transport source has mass outside the target's range.

    The optimal map from ``F`` to ``G`` exists only when
    ``ker(F)`` is contained in ``ker(G)``.
    """


class LambdaOutOfRangeError(ValidationError):
    """Geodesic parameter lies outside [0, 1]."""


class GridMismatchError(ValidationError):
    """Two flows do not share the same time grid."""


class AllDegenerateError(ValidationError):
    """No sample is positive definite and no injective start is available."""


class KTooLargeError(ValidationError):
    """Requested more principal components than samples."""


class KOutOfRangeError(ValidationError):
    """Component index outside the fitted model."""


class LambdaTooLargeError(ValidationError):
    """Mode-of-variation amplitude exceeds the positivity bound."""


class EmptyWindowError(ValidationError):
    """No observation falls inside the kernel window at some point."""

    def __init__(self, points, message=None):
        self.points = list(points)
        if message is None:
            message = f"no observations in the kernel window at {self.points}"
        super().__init__(message)


class SingularDesignError(ValidationError):
    """Local-linear design matrix is singular at an evaluation point."""


class LagTooLargeError(ValidationError):
    """Autocovariance lag is not smaller than the series length."""


class GridTooCoarseError(ValidationError):
    """Frequency grid cannot resolve the requested lag without aliasing."""


class EmptyFreqGridError(ValidationError):
    """Spectral density requested on an empty frequency grid."""


class RaggedSeriesError(ValidationError):
    """Multivariate series has rows of unequal dimension."""


class WindowTooLargeError(ValidationError):
    """Sliding window exceeds the series length."""


class FormatError(ValidationError):
    """A binary container is malformed or fails validation."""


class PointwiseFailureError(BwflowError):
    """A per-grid-point computation failed; carries the grid index."""

    def __init__(self, index, cause):
        self.index = index
        self.cause = cause
        super().__init__(f"failure at grid index {index}: {cause}")


class NonConvergenceError(BwflowError):
    """An iterative solver exceeded max_iter without reaching tolerance.

    Carries the convergence trace accumulated so far.
    """

    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)


class SingularMomentsWarning(UserWarning):
    """Local-linear moment matrix was singular; fell back to constant fit."""


class NegativeWeightWarning(UserWarning):
    """Signed smoothing weights were degenerate or clipped."""
