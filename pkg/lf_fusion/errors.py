# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Exception hierarchy; every class carries the CLI exit code it maps to."""
from typing import Optional


class LfFusionError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message
        self.context: Optional[str] = None

    def annotate(self, context: str) -> "LfFusionError":
        """Prefix the message with ``context`` and return self for raising."""
        self.context = context
        self.message = f"{context}: {self.message}"
        self.args = (self.message,)
        return self

    def __str__(self) -> str:
        return self.message


class InputError(LfFusionError):
    """Bad or unreadable input."""

    exit_code = 2


class NumericalError(LfFusionError):
    """A numerical precondition failed or the data is degenerate."""

    exit_code = 3


# === Input errors ===
class ModelIOError(InputError):
    """A required file of a sparse model is missing or unreadable."""


class ParseError(InputError):
    """A malformed line in a text file."""

    def __init__(self, path: str, line_number: int, message: str) -> None:
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = path
        self.line_number = line_number


class UnsupportedModelError(InputError):
    """A camera model other than PINHOLE / SIMPLE_PINHOLE."""


class ModelConsistencyError(InputError):
    """Dangling ids or non-unit quaternions in a sparse model."""


class ContainerFormatError(InputError):
    """A DPV1, PFM or light field directory could not be decoded."""


class UnsupportedGridError(InputError):
    """A light field with even angular dimensions."""


# === Numerical errors ===
class InvalidVolumeError(NumericalError):
    """A probability volume breaks its invariants."""


class PreconditionError(NumericalError):
    """An operation was called on data that does not meet its contract."""


class BehindCameraError(NumericalError):
    """A point lies on or behind the image plane."""


class CameraError(NumericalError):
    """Camera parameters break their invariants."""


class ParameterError(NumericalError):
    """A scalar parameter is out of its valid range."""


class EmptyAnchorError(NumericalError):
    """No anchors survive for a requested view."""


class InsufficientAnchorError(NumericalError):
    """Too few anchors to derive a depth range."""


class SingularSystemError(NumericalError):
    """The scale-mapping least squares system is rank deficient."""


class InvalidMappingError(NumericalError):
    """A scale mapping sends a plane to a non-positive depth."""

    def __init__(self, message: str, plane_index: int) -> None:
        super().__init__(message)
        self.plane_index = plane_index


class ExcessiveTrimError(NumericalError):
    """Trimming left fewer planes than required."""


class ResampleError(NumericalError):
    """Too few planes to interpolate."""


class FrameError(NumericalError):
    """Label units of two volumes or maps do not match."""


class FusionError(NumericalError):
    """Warped volumes disagree in shape or labels."""


class GuideError(NumericalError):
    """Guide image does not match the disparity map."""


class MetricError(NumericalError):
    """A metric cannot be evaluated (empty mask, tiny image)."""


class RescaleError(NumericalError):
    """The reference of a linear rescale has no range."""


class SceneError(NumericalError):
    """A synthetic scene cannot be rendered."""
