"""Exception types shared across the package."""


class CicaError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(CicaError, ValueError):
    """Shapes or channel counts do not agree."""


class SketchFormatError(CicaError, ValueError):
    """A sketch or data file could not be parsed."""


class FingerprintError(CicaError, ValueError):
    """Two sketches were built with different operators or modes."""


class DivergenceError(CicaError, ArithmeticError):
    """A solver produced a non-finite iterate."""


class RankDeficiencyError(CicaError, ValueError):
    """A covariance matrix has fewer than n usable eigenvalues."""
