"""Exception hierarchy shared by every entropykit module."""

from __future__ import annotations


class EntropyKitError(Exception):
    """Base class for all library errors."""


class InputError(EntropyKitError):
    """Raised when an input stream cannot be read or decoded."""


class CorruptInputError(InputError):
    """Raised when too many records of an input stream are rejected."""


class InsufficientDataError(EntropyKitError):
    """Raised when a measure cannot be computed from the available data.

    Callers record the affected feature as missing, never as zero.
    """


class NoStationaryDistributionError(EntropyKitError):
    """Raised when power iteration fails to converge within its cap."""


class ReducibleChainError(EntropyKitError):
    """Raised when an operation needs an irreducible chain and gets another."""


class InfiniteEntropyProductionError(EntropyKitError):
    """Raised when a transition is observed in one direction only."""


class DivergedError(EntropyKitError):
    """Raised when training produces a non-finite objective or gradient."""

    def __init__(self, epoch: int, message: str = "") -> None:
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")
