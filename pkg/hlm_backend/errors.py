"""Exception hierarchy shared by the HLM backend."""

from __future__ import annotations

from typing import Dict, Optional


class ParameterValidationError(ValueError):
    """Raised when configuration values fail validation.

    ``errors`` maps each offending field to a human readable message so callers
    can report every problem at once.
    """

    def __init__(self, errors: Dict[str, str]):
        self.errors = errors
        message = "; ".join(errors.values()) if errors else "Invalid parameters."
        super().__init__(message)


class SpecificationError(ValueError):
    """Model specification and input dimensions disagree."""


class DataValidationError(ValueError):
    """A dataset or input file violates the dataset invariants."""


class MissingnessError(ValueError):
    """A missingness law references an unknown variable or is malformed."""


class InsufficientCompleteCasesError(ValueError):
    """Too few fully observed clusters to estimate the covariate covariance."""


class SamplerError(RuntimeError):
    """Numerical failure inside a Gibbs cycle."""

    def __init__(self, message: str, *, cycle: Optional[int] = None, step: Optional[str] = None):
        super().__init__(message)
        self.detail = message
        self.cycle = cycle
        self.step = step

    def locate(self, cycle: int, step: str) -> "SamplerError":
        """Attach the cycle and step unless an inner frame already did."""
        if self.cycle is None:
            self.cycle = cycle
        if self.step is None:
            self.step = step
        return self

    def __str__(self) -> str:
        if self.cycle is None and self.step is None:
            return self.detail
        return f"cycle {self.cycle}, step {self.step}: {self.detail}"


class SingularDesignError(SamplerError):
    """The fixed-effect cross-product matrix is singular."""

    def __init__(self, column: int, label: str):
        self.column = column
        self.label = label
        super().__init__(
            f"fixed-effect design is singular; column {column} ({label}) is linearly "
            "dependent on the preceding columns"
        )


__all__ = [
    "DataValidationError",
    "InsufficientCompleteCasesError",
    "MissingnessError",
    "ParameterValidationError",
    "SamplerError",
    "SingularDesignError",
    "SpecificationError",
]
