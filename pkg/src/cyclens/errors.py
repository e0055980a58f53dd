"""Exception hierarchy.

Every error carries a short machine-readable ``kind`` (the class name) so the
CLI can print one parseable line on failure.
"""
from __future__ import annotations


class CyclensError(Exception):
    @property
    def kind(self) -> str:
        return type(self).__name__


# environments
class OutOfBoundsAction(CyclensError):
    pass


class StepAfterDone(CyclensError):
    pass


# learner
class DimensionMismatch(CyclensError):
    pass


class NonPositiveProbability(CyclensError):
    pass


class NonFiniteGradient(CyclensError):
    def __init__(self, message: str, batch_index: int):
        super().__init__(message)
        self.batch_index = batch_index


# schedule
class OutOfRangeStep(CyclensError):
    pass


# snapshot store
class IoFailure(CyclensError):
    pass


class BadMagic(CyclensError):
    pass


class UnsupportedVersion(CyclensError):
    pass


class LengthMismatch(CyclensError):
    pass


class ArchitectureMismatch(CyclensError):
    pass


# selection
class ZeroSupportMismatch(CyclensError):
    pass


class NonSymmetricInput(CyclensError):
    pass


class NoConvergence(CyclensError):
    def __init__(self, message: str, best=None, gap: float = float("nan")):
        super().__init__(message)
        self.best = best
        self.gap = gap


# ensemble / harness
class StrategySpaceMismatch(CyclensError):
    pass


class ConfigError(CyclensError):
    pass
