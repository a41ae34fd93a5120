"""Exception hierarchy. Each family carries a distinct CLI exit code."""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class IngestionError(EngineError):
    """Dataset could not be read (missing files, undecodable rasters)."""

    exit_code = 2


class DecodeError(IngestionError):
    """A raster file exists but could not be decoded."""


class MaskValidationError(EngineError):
    """A segmentation mask violates a structural constraint."""

    exit_code = 3


class ConvergenceError(EngineError):
    """Iterative solver failed to reach the requested residual ratio."""

    exit_code = 4

    def __init__(self, message: str, residual_ratio: float, iterations: int):
        super().__init__(message)
        self.residual_ratio = residual_ratio
        self.iterations = iterations


class UnbalanceableError(EngineError):
    """A class required for balancing has no donors in the index."""

    exit_code = 5

    def __init__(self, message: str, class_id: int):
        super().__init__(message)
        self.class_id = class_id


class PlacementError(EngineError):
    """A defect region does not fit the target at the requested offset."""

    exit_code = 6


class EmptyRegionError(EngineError):
    """A cloning region was requested for an all-zero mask."""

    exit_code = 6


class TransformError(EngineError):
    """Geometric augmentation degenerated (e.g. emptied the mask)."""

    exit_code = 6


class InjectionError(EngineError):
    """No valid injection could be produced within the retry budget."""

    exit_code = 6
