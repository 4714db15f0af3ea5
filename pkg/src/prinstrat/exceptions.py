"""Exception hierarchy shared across the package."""

from __future__ import annotations


class PrinstratError(Exception):
    """Base class for every error raised by this package."""


class FormulaError(PrinstratError, ValueError):
    """Malformed model formula; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int | None = None, text: str | None = None):
        self.offset = offset
        self.text = text
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class StrataError(PrinstratError, ValueError):
    """Invalid principal strata declaration."""


class ConfigError(PrinstratError, ValueError):
    """Invalid family, prior, sampler or run configuration."""


class DataError(PrinstratError, ValueError):
    """Data do not satisfy the model's requirements."""


class IncompatibleDataError(DataError):
    """An observed (Z, D) pattern is not produced by any declared stratum."""


class MonotonicityError(DataError):
    """Estimated principal scores contradict monotonicity."""


class SamplerError(PrinstratError, RuntimeError):
    """The sampler could not initialise or run."""


class UnstableEstimateError(PrinstratError, RuntimeError):
    """Weighted estimate rests on too few effective observations."""
