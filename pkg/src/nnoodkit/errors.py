"""Exception types shared across the toolkit."""


class NnoodkitError(Exception):
    """Base class for all toolkit errors."""


class UnsupportedRankError(NnoodkitError):
    """Operation does not support the spatial rank of the input."""


class EmptyForegroundError(NnoodkitError):
    """Foreground extraction classified every pixel as background."""


class InfeasibleBoundsError(NnoodkitError):
    """Patch extent bounds admit no valid placement."""


class PlacementError(NnoodkitError):
    """No valid patch placement found within the rejection-sampling cap."""


class SolverError(NnoodkitError):
    """Iterative solve failed to reach the requested residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class UndefinedMetricError(NnoodkitError):
    """Metric is undefined for the given label vector (single class)."""


class CoverageError(NnoodkitError):
    """Tile set leaves part of the image uncovered."""


class CalibrationError(NnoodkitError):
    """Task calibration could not derive parameters from the dataset."""


class DatasetError(NnoodkitError):
    """Dataset layout or descriptor is malformed."""
