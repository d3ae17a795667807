"""Exception taxonomy for the simulator library.

Every error raised on purpose by this package derives from MasimError so
callers can catch library failures without masking programming mistakes
(plain TypeError/ValueError are still used for API misuse).
"""
from __future__ import annotations


class MasimError(Exception):
    """Base class for all library-specific failures."""


class SpanningTreeMissing(MasimError):
    """The digraph has no leader-rooted spanning tree; coupling matrix is singular."""


class NonPositivePhi(MasimError):
    """The left scaling vector of the coupling matrix has a non-positive entry."""


class NotStabilizable(MasimError):
    """The (A, B) pair fails the PBH stabilizability test, or no stabilizing
    Riccati solution exists."""


class GammaTooSmall(MasimError):
    """No stabilizing solution of the attenuation Riccati equation exists at
    the requested attenuation level."""


class DimensionMismatch(MasimError):
    """Matrix or vector dimensions are inconsistent."""


class NonFinite(MasimError):
    """A state component became NaN or Inf during integration.

    Attributes:
        t: simulation time at which divergence was detected.
    """

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class ModeNotFound(MasimError):
    """Requested oscillation mode is not an eigenvalue of the plant matrix."""


class SingularLf(MasimError):
    """The follower block of the coupling matrix is singular; no steady
    offset prediction exists."""


class ZeroAttackEnergy(MasimError):
    """The trace contains no nonzero disturbance, so a gain ratio is undefined."""


class InsufficientExcitation(MasimError):
    """Collected data does not span the unknown space (regression rank deficit)."""


class SingularRegression(MasimError):
    """The least-squares system is rank deficient and cannot be solved."""


class NoConvergence(MasimError):
    """Iterative learning failed to converge.

    Attributes:
        history: per-iteration change norms accumulated before giving up.
    """

    def __init__(self, message: str, history: list | None = None):
        super().__init__(message)
        self.history = history or []


class ScenarioError(MasimError):
    """A scenario file is missing, malformed, or semantically invalid."""
