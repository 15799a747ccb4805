"""Exception hierarchy shared by all modules.

Every failure path raises a subclass of :class:`ConicScatterError`; the CLI maps
each class to a distinct exit code (see ``cli.EXIT_CODES``).
"""


class ConicScatterError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ConicScatterError):
    """Invalid or inconsistent run configuration."""


class GeometryError(ConicScatterError):
    """Nonpositive density/tensor, singular metric block, or similar."""


class AssumptionError(ConicScatterError):
    """A claimed coefficient decay rate fails numerical validation."""


class ResolutionError(ConicScatterError):
    """Grid too coarse for the requested energy window."""


class AlignmentError(ConicScatterError):
    """Grids that must share nodes do not."""


class ConjugateError(ConicScatterError):
    """Conjugate-operator scale R too small for the singular potential support."""


class NumericalError(ConicScatterError):
    """Linear solver or eigensolver breakdown."""


class LapError(ConicScatterError):
    """Limiting-absorption extrapolation residual above tolerance."""


class HorizonError(ConicScatterError):
    """Time/integration horizon insufficient (Cook tail or discarded mass)."""


class QuadratureError(ConicScatterError):
    """Energy quadrature failed to converge under node doubling."""


class FilterError(ConicScatterError):
    """Spectral filter too soft for the requested interval."""


class FitError(ConicScatterError):
    """Amplitude/decay fit ill-conditioned or inconsistent."""


class AccuracyError(ConicScatterError):
    """A computed quantity misses its configured accuracy bound."""
