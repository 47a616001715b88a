"""Exception types shared across the package.

Two broad families matter to callers: problems with user-supplied input
(bad data files, out-of-range parameters) and numeric failures arising
during a computation (rank-deficient designs, saturated fits).  The CLI
maps the first family to exit code 2 and the second to exit code 3.
"""


class TsvcError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(TsvcError, ValueError):
    """Invalid user-supplied data or parameters."""


class DomainError(TsvcError, ValueError):
    """Argument outside the domain of a closed-form expression."""


class DimensionMismatchError(TsvcError, ValueError):
    """Array shapes incompatible with the model or operation."""


class NonPositiveValuesError(TsvcError, ValueError):
    """Nonpositive values fed to a transform that requires positivity."""


class RankDeficientError(TsvcError):
    """Design matrix numerically rank deficient."""


class DegenerateFitError(TsvcError):
    """Zero residual variance; the Gaussian likelihood is unbounded."""


class EmptyLeafError(TsvcError):
    """A tree leaf captures no training observations."""


class NoAdmissibleSplitError(TsvcError):
    """No candidate split satisfies the minimum leaf size."""


class OffGridError(TsvcError):
    """Requested cell absent from a lookup table."""


class MissingDofError(TsvcError):
    """A degrees-of-freedom source cannot supply a needed value."""


class NoConvergenceError(TsvcError):
    """Iterative selection failed to stabilise within the cycle budget."""
