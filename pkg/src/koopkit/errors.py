"""Exception types raised across koopkit."""

from __future__ import annotations


class KoopkitError(Exception):
    """Base class for all koopkit errors."""


class InvalidInput(KoopkitError, ValueError):
    pass


class InvalidRank(InvalidInput):
    pass


class InvalidProblem(KoopkitError, ValueError):
    pass


class NumericalFailure(KoopkitError, ArithmeticError):
    """An iterative kernel did not converge.

    ``best`` carries the best iterate found before giving up (may be None).
    """

    def __init__(self, message: str, best=None, diagnostic: dict | None = None):
        super().__init__(message)
        self.best = best
        self.diagnostic = diagnostic or {}


class DegenerateData(KoopkitError, ValueError):
    pass


class BackwardSingular(NumericalFailure):
    pass


class RankDeficient(KoopkitError, ValueError):
    def __init__(self, message: str, achieved_rank: int, required_rank: int):
        super().__init__(message)
        self.achieved_rank = achieved_rank
        self.required_rank = required_rank


class IllPosed(KoopkitError, ValueError):
    pass


class NoGradient(KoopkitError, ValueError):
    pass


class UnknownSystem(KoopkitError, KeyError):
    pass


class DivergedTrajectory(KoopkitError, ArithmeticError):
    """Integration produced a non-finite state.

    ``last_index`` is the index of the last finite sample and ``partial`` the
    trajectory (or closed-loop result) truncated there.
    """

    def __init__(self, message: str, last_index: int, partial=None):
        super().__init__(message)
        self.last_index = last_index
        self.partial = partial


class VersionError(KoopkitError, ValueError):
    pass


class ModelFileError(KoopkitError, OSError):
    """Model or report file is unreadable or malformed."""
