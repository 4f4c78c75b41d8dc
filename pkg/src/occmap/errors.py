"""Exception hierarchy shared by all occmap modules."""


class OccmapError(Exception):
    """Base class for all errors raised by occmap."""


class DimensionError(OccmapError, ValueError):
    """Raster or network dimensions are invalid."""


class PlacementError(OccmapError, ValueError):
    """A point (emitter, sensor) lies outside the region."""


class GridError(OccmapError, ValueError):
    """The raster cannot be partitioned by the requested grid."""


class ParameterError(OccmapError, ValueError):
    """A numeric parameter is out of its admissible range."""


class ModeError(OccmapError, ValueError):
    """Aggregation mode is inconsistent with the readings provided."""


class ShapeError(OccmapError, ValueError):
    """Array shapes do not match."""


class StateError(OccmapError, RuntimeError):
    """An operation was invoked in the wrong order."""


class SolverError(OccmapError, RuntimeError):
    """A linear system could not be solved reliably."""

    def __init__(self, message, condition=None):
        super().__init__(message if condition is None else f"{message} (cond={condition:.3e})")
        self.condition = condition


class FormatError(OccmapError, ValueError):
    """A file does not follow the expected on-disk format."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class NonFiniteValueError(FormatError):
    """A file contains NaN or infinite values where finite ones are required."""
