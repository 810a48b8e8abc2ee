# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Domain types shared by every stage of the pipeline."""
from typing import Dict, List, Optional, Tuple
from enum import Enum

import attr
import numpy as np
from numpy.typing import ArrayLike

from lf_fusion.errors import CameraError, InvalidVolumeError, ParameterError

# The SAI at angular offset v shows central content x at x + PARALLAX_SIGN*d*v
PARALLAX_SIGN = -1.0

NORMALIZED_TOLERANCE = 1e-6


def frozen_array(value: ArrayLike) -> np.ndarray:
    """Return a read-only float64 view of ``value``."""
    array = np.asarray(value, dtype=np.float64)
    if array.flags.writeable:
        array = array.copy()
        array.flags.writeable = False
    return array


class LabelUnit(Enum):
    """What the plane labels of a volume (or values of a map) measure."""

    SOURCE_DISPARITY = 0
    WORLD_DEPTH = 1
    INVERSE_DEPTH = 2


@attr.s(auto_attribs=True, slots=True, frozen=True, eq=False)
class CameraModel:
    """
    A pinhole view: intrinsics plus a world-to-camera pose.

    A world point X maps to camera coordinates ``rotation @ X + tau``.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = attr.ib(converter=frozen_array)
    tau: np.ndarray = attr.ib(converter=frozen_array)
    width: int
    height: int

    def __attrs_post_init__(self) -> None:
        if self.rotation.shape != (3, 3) or self.tau.shape != (3,):
            raise CameraError("rotation must be 3x3 and tau a 3-vector")
        if not np.allclose(
            self.rotation @ self.rotation.T, np.eye(3), rtol=0, atol=1e-9
        ):
            raise CameraError("rotation is not orthonormal")
        if abs(np.linalg.det(self.rotation) - 1.0) > 1e-9:
            raise CameraError("rotation must have determinant +1")
        if self.fx <= 0 or self.fy <= 0:
            raise CameraError(
                f"focal lengths must be positive, got {self.fx}, {self.fy}"
            )
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise CameraError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )

    @classmethod
    def looking_down_z(
        cls,
        focal: float,
        width: int,
        height: int,
        center: ArrayLike = (0.0, 0.0, 0.0),
        rotation: Optional[ArrayLike] = None,
    ) -> "CameraModel":
        """Build a camera at world position ``center`` with centered optics."""
        rot = np.eye(3) if rotation is None else np.asarray(rotation, float)
        tau = -rot @ np.asarray(center, dtype=np.float64)
        return cls(
            fx=focal,
            fy=focal,
            cx=(width - 1) / 2,
            cy=(height - 1) / 2,
            rotation=rot,
            tau=tau,
            width=width,
            height=height,
        )

    @property
    def principal_axis(self) -> np.ndarray:
        """Viewing direction in world coordinates (third row of R)."""
        return self.rotation[2]

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.tau

    @property
    def intrinsics(self) -> np.ndarray:
        """The 3x3 intrinsic matrix K."""
        return np.array(
            [
                [self.fx, 0.0, self.cx],
                [0.0, self.fy, self.cy],
                [0.0, 0.0, 1.0],
            ]
        )

    def to_camera(self, points: ArrayLike) -> np.ndarray:
        """Transform world points (..., 3) into camera coordinates."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.tau

    def back_project(self, x: float, y: float, z: float) -> np.ndarray:
        """World point seen at pixel (x, y) with camera-frame depth z."""
        cam = np.array(
            [(x - self.cx) / self.fx * z, (y - self.cy) / self.fy * z, z]
        )
        return self.rotation.T @ (cam - self.tau)

    def pixel_rays(self) -> np.ndarray:
        """
        World-frame ray directions for every pixel, shape (H, W, 3).

        Directions are scaled so their camera-frame z component is 1, so a
        ray parameter t equals the camera-frame depth.
        """
        ys, xs = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        cam = np.stack(
            [
                (xs - self.cx) / self.fx,
                (ys - self.cy) / self.fy,
                np.ones_like(xs),
            ],
            axis=-1,
        )
        return cam @ self.rotation

    def translated(self, offset_cam: ArrayLike) -> "CameraModel":
        """Copy of this camera moved by ``offset_cam`` in its own frame."""
        return attr.evolve(
            self, tau=self.tau - np.asarray(offset_cam, dtype=np.float64)
        )


def _check_labels(labels: np.ndarray) -> None:
    if labels.ndim != 1 or labels.size < 1:
        raise InvalidVolumeError("labels must be a non-empty vector")
    if labels.size > 1:
        steps = np.diff(labels)
        if not (np.all(steps > 0) or np.all(steps < 0)):
            raise InvalidVolumeError("labels must be strictly monotone")


@attr.s(auto_attribs=True, slots=True, frozen=True, eq=False)
class Dpv:
    """
    A disparity probability volume.

    ``probs`` is plane-major (K, H, W); ``labels[k]`` is the value of plane
    k measured in ``label_unit``.
    """

    labels: np.ndarray = attr.ib(converter=frozen_array)
    probs: np.ndarray = attr.ib(converter=frozen_array)
    label_unit: LabelUnit
    normalized: bool

    def __attrs_post_init__(self) -> None:
        _check_labels(self.labels)
        if self.probs.ndim != 3 or self.probs.shape[0] != self.labels.size:
            raise InvalidVolumeError(
                f"probs shape {self.probs.shape} does not match "
                f"{self.labels.size} labels"
            )
        if np.any(self.probs < 0) or not np.all(np.isfinite(self.probs)):
            raise InvalidVolumeError(
                "probabilities must be finite and non-negative"
            )

    @classmethod
    def build(
        cls, labels: ArrayLike, probs: ArrayLike, label_unit: LabelUnit
    ) -> "Dpv":
        """Build a volume, deriving the normalized flag from the data."""
        probs_ = frozen_array(probs)
        sums = probs_.sum(axis=0)
        normalized = bool(
            probs_.size
            and np.all(np.abs(sums - 1.0) <= NORMALIZED_TOLERANCE)
        )
        return cls(
            labels=labels,
            probs=probs_,
            label_unit=label_unit,
            normalized=normalized,
        )

    @property
    def n_planes(self) -> int:
        """Number of planes K."""
        return int(self.labels.size)

    @property
    def height(self) -> int:
        """Height in pixels."""
        return int(self.probs.shape[1])

    @property
    def width(self) -> int:
        """Width in pixels."""
        return int(self.probs.shape[2])

    @property
    def ascending(self) -> bool:
        """Whether labels increase with the plane index."""
        return self.labels.size < 2 or bool(self.labels[1] > self.labels[0])


@attr.s(auto_attribs=True, slots=True, frozen=True, eq=False)
class DisparityMap:
    """A per-pixel map, tagged with the unit of its values."""

    values: np.ndarray = attr.ib(converter=frozen_array)
    unit: LabelUnit

    @property
    def shape(self) -> Tuple[int, int]:
        """(height, width)."""
        return self.values.shape[0], self.values.shape[1]


@attr.s(auto_attribs=True, slots=True, frozen=True)
class AnchorObservation:
    """One anchor seen in one view."""

    point_id: int
    x: float
    y: float
    z: float


@attr.s(auto_attribs=True, slots=True, frozen=True, eq=False)
class AnchorSet:
    """Sparse world points with their per-view projections and depths."""

    points: Dict[int, np.ndarray]
    observations: Dict[str, List[AnchorObservation]]
    depth_range: Dict[str, Tuple[float, float]] = attr.ib(factory=dict)
    dropped_behind: Dict[str, int] = attr.ib(factory=dict)
    dropped_outside: Dict[str, int] = attr.ib(factory=dict)

    def __attrs_post_init__(self) -> None:
        for view, observations in self.observations.items():
            if any(obs.z <= 0 for obs in observations):
                raise ParameterError(
                    f"anchor with non-positive depth in {view}"
                )
        for view, (low, high) in self.depth_range.items():
            if not low < high:
                raise ParameterError(
                    f"depth range of {view} is empty: ({low}, {high})"
                )

    def for_view(self, view: str) -> List[AnchorObservation]:
        """Observations of one view (empty if the view is unknown)."""
        return self.observations.get(view, [])


@attr.s(auto_attribs=True, slots=True, frozen=True, eq=False)
class LightField:
    """A light field stored as an (M, N, H, W, C) array of SAIs."""

    views: np.ndarray = attr.ib(converter=frozen_array)

    def __attrs_post_init__(self) -> None:
        if self.views.ndim != 5:
            raise InvalidVolumeError(
                f"light field must be 5-D, got shape {self.views.shape}"
            )
        if not np.all(np.isfinite(self.views)):
            raise InvalidVolumeError("light field samples must be finite")
        if self.views.min() < 0 or self.views.max() > 1:
            raise InvalidVolumeError("light field samples must be in [0, 1]")

    @property
    def rows(self) -> int:
        """Angular rows M."""
        return int(self.views.shape[0])

    @property
    def cols(self) -> int:
        """Angular columns N."""
        return int(self.views.shape[1])

    @property
    def height(self) -> int:
        """Height in pixels."""
        return int(self.views.shape[2])

    @property
    def width(self) -> int:
        """Width in pixels."""
        return int(self.views.shape[3])

    @property
    def channels(self) -> int:
        """Color channels."""
        return int(self.views.shape[4])

    @property
    def center_index(self) -> Tuple[int, int]:
        """Index of the central SAI."""
        return (self.rows - 1) // 2, (self.cols - 1) // 2

    @property
    def central_view(self) -> np.ndarray:
        """The central SAI, (H, W, C)."""
        row, col = self.center_index
        return self.views[row, col]

    def angular_offset(self, row: int, col: int) -> Tuple[int, int]:
        """(du, dv) of SAI (row, col) relative to the central view."""
        center_row, center_col = self.center_index
        return col - center_col, row - center_row


@attr.s(auto_attribs=True, slots=True, frozen=True, eq=False)
class DisparityField:
    """Per-view parallax in pixels per unit angular offset, (M, N, H, W)."""

    values: np.ndarray = attr.ib(converter=frozen_array)

    def __attrs_post_init__(self) -> None:
        if self.values.ndim != 4:
            raise InvalidVolumeError(
                f"disparity field must be 4-D, got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise InvalidVolumeError("disparity field must be finite")

    @property
    def rows(self) -> int:
        """Angular rows M."""
        return int(self.values.shape[0])

    @property
    def cols(self) -> int:
        """Angular columns N."""
        return int(self.values.shape[1])

    @property
    def center_index(self) -> Tuple[int, int]:
        """Index of the central slice."""
        return (self.rows - 1) // 2, (self.cols - 1) // 2


def angular_offsets(rows: int, cols: int) -> List[Tuple[int, int, int, int]]:
    """(row, col, du, dv) for every cell of an odd angular grid."""
    center_row, center_col = (rows - 1) // 2, (cols - 1) // 2
    return [
        (row, col, col - center_col, row - center_row)
        for row in range(rows)
        for col in range(cols)
    ]
