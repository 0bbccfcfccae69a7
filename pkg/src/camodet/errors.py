"""Exception types shared across the package.

Every error carries a short machine-readable ``code`` so the CLI can emit
one-line parseable failures.
"""

from __future__ import annotations


class CamodetError(Exception):
    """Base class for all toolkit errors."""

    code = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class InvalidBoxError(CamodetError):
    """A box violates the geometry invariants (non-positive extent, non-finite)."""

    code = "invalid-box"


class AnnotationError(CamodetError):
    """An annotation file is malformed or violates dataset invariants."""

    code = "invalid-annotation"


class MosaicError(CamodetError):
    """Canvas assembly received inconsistent crops or grid parameters."""

    code = "mosaic"


class ImageIOError(CamodetError):
    """An image file could not be read or written."""

    code = "image-io"


class ConfigError(CamodetError):
    """Bad CLI flags or config-file contents."""

    code = "config"


class EvaluationError(CamodetError):
    """A detections file references unknown images or categories."""

    code = "evaluation"
