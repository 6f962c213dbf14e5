"""Exceptions and warnings shared across the package."""


class FracviError(Exception):
    """Base class for all package errors."""


class ParameterError(FracviError):
    """A scalar parameter is outside its admissible range (e.g. s not in (0,1))."""


class OverlapError(FracviError):
    """An obstacle interval meets the closure of Omega or another obstacle interval."""


class TruncationError(FracviError):
    """The truncation radius does not enclose Omega and all obstacle intervals."""


class SingularityError(FracviError):
    """Kernel evaluated on the diagonal x = y."""


class EmptyRegion(FracviError):
    """A region required to carry degrees of freedom has none."""


class DomainError(FracviError):
    """A point lies outside the domain an operator is defined on."""


class SingularSystem(FracviError):
    """A linear solve failed or did not meet its residual contract."""


class MaxIterations(FracviError):
    """An iterative solver exhausted its iteration budget."""


class NoConvergence(FracviError):
    """A Newton-type solver failed to converge within its step budget."""


class AssertionFailure(FracviError):
    """A theorem-derived bound was violated during a diagnostic sweep."""


class ConfigError(FracviError):
    """The run configuration file is malformed or inconsistent."""


class DegenerateRegionWarning(UserWarning):
    """A region narrower than h/2 was meshed with a single element."""


class AccuracyWarning(UserWarning):
    """Requested parameters degrade the declared quadrature accuracy."""
