"""Exception taxonomy shared across the package.

Shape/geometry errors signal misuse of the tensor and network layers;
parse/dataset errors signal bad on-disk inputs and map to CLI exit code 2.
"""


class SalfuseError(Exception):
    """Base class for package-specific errors."""


class ShapeError(SalfuseError, ValueError):
    """Tensor rank or dimension mismatch (e.g. channel count disagreement)."""


class GeometryError(SalfuseError, ValueError):
    """Spatial geometry is unusable (empty conv output, stride mismatch...)."""


class ParseError(SalfuseError, ValueError):
    """Malformed binary input. Carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DatasetError(SalfuseError, ValueError):
    """Dataset directory layout violations (missing files, unmatched stems)."""
