"""Exception hierarchy shared by the library and the CLI."""

from __future__ import annotations


class AtlasError(Exception):
    """Base class for every error raised by cvqkd_atlas."""


class InvalidArgumentError(AtlasError, ValueError):
    pass


class UnsupportedConstellationError(AtlasError, ValueError):
    pass


class TruncationError(AtlasError):
    """The Fock cutoff is too small to represent a coherent state."""

    def __init__(self, message: str, achieved_norm: float | None = None) -> None:
        super().__init__(message)
        self.achieved_norm = achieved_norm


class ConvergenceError(AtlasError):
    pass


class NumericalDomainError(AtlasError, ValueError):
    pass


class ComputationError(AtlasError):
    pass


class SweepAbortedError(ComputationError):
    pass


class FitError(AtlasError):
    def __init__(self, message: str, deficient_terms: tuple[str, ...] = ()) -> None:
        super().__init__(message)
        self.deficient_terms = deficient_terms


class MetricError(AtlasError):
    pass


class ComparisonError(AtlasError):
    pass


class ConfigError(AtlasError, ValueError):
    pass
