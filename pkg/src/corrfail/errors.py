"""Exception hierarchy shared by all corrfail modules.

The CLI maps these onto stable exit codes: usage problems exit with 2,
input/feasibility problems with 3, numerical failures with 4.
"""


class CorrfailError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CorrfailError, ValueError):
    """Shapes or lengths of inputs do not agree."""


class EnumerationCapError(CorrfailError, ValueError):
    """Requested exact enumeration above the configured dimension cap."""


class FeasibilityError(CorrfailError, ValueError):
    """Moment constraints violate the Frechet-Hoeffding bounds.

    Carries the per-pair violation report in ``violations``.
    """

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class DegenerateMarginalError(CorrfailError, ValueError):
    """A marginal failure probability of exactly 0 or 1 makes a fit diverge."""


class NumericalError(CorrfailError, RuntimeError):
    """Non-finite values or failed convergence inside a numerical routine."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class InputFormatError(CorrfailError, ValueError):
    """A data file could not be parsed; message carries file/line context."""
