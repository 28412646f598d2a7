"""Exception types shared across the package."""


class CompheadError(Exception):
    """Base class for all library errors."""


class FormatError(CompheadError):
    """A file does not conform to its declared binary/text format."""


class ShapeError(CompheadError):
    """Array shapes or dimensions are inconsistent."""


class InitError(CompheadError):
    """Model initialization preconditions are violated."""


class GenerationError(CompheadError):
    """A synthetic sample could not be produced within its constraints."""


class GeometryError(CompheadError):
    """Image/feature-map geometry does not match the model."""


class DivergenceError(CompheadError):
    """Training produced a non-finite loss."""
