"""Exception and warning types raised across borrowbench."""

from __future__ import annotations


class BorrowError(Exception):
    """Base class for all borrowbench errors."""


class DataError(BorrowError, ValueError):
    """Invalid or malformed trial data."""


class MalformedRow(DataError):
    pass


class InvalidCount(DataError):
    pass


class DuplicateLabel(DataError):
    pass


class MissingRole(DataError):
    pass


class UnknownDataset(BorrowError, KeyError):
    pass


class NumericalError(BorrowError, ArithmeticError):
    """A sampler or fitter could not produce a usable result."""


class NonFiniteTarget(NumericalError):
    pass


class DegenerateInit(NumericalError):
    pass


class TooFewDraws(BorrowError, ValueError):
    pass


class EmFailure(NumericalError):
    pass


class AllDrawsExcluded(NumericalError):
    pass


class MissingSigmaRef(BorrowError, ValueError):
    pass


class TooManySources(BorrowError, ValueError):
    pass


class NoEligibleMethods(BorrowError, ValueError):
    pass


class MissingEss(BorrowError, ValueError):
    pass


class UnknownMethod(BorrowError, KeyError):
    pass


class IoFailure(BorrowError, OSError):
    pass


class BorrowWarning(UserWarning):
    pass


class DegenerateRate(BorrowWarning):
    """A historical response rate of 0 or 1 was continuity-corrected."""


class DegeneratePrior(BorrowWarning):
    """A moment-matched prior fell back to Beta(1, 1)."""


class DegenerateChain(BorrowWarning):
    """A chain had zero variance; diagnostics are not meaningful."""


class NegativeCurvature(BorrowWarning):
    """Some draws had negative log-density curvature (kept in the ELIR average)."""


class ConvergenceWarning(BorrowWarning):
    pass
