# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Probability volume primitives used by every stage."""
from typing import Tuple
from logging import getLogger

import numpy as np
from numpy.typing import ArrayLike

from lf_fusion.errors import (
    BehindCameraError,
    InvalidVolumeError,
    PreconditionError,
)
from lf_fusion.models import CameraModel, DisparityMap, Dpv

logger = getLogger("core")

# Sums this close to 1 are left alone so normalization is idempotent
_SUM_EXACT = 1e-12


def normalize_probs(probs: ArrayLike) -> Tuple[np.ndarray, int]:
    """
    Rescale a (K, H, W) array so every pixel sums to 1.

    Pixels with no mass become uniform. Returns the new array and the
    number of such zero-mass pixels.
    """
    probs_ = np.asarray(probs, dtype=np.float64)
    if np.any(probs_ < 0):
        raise InvalidVolumeError("negative probability in volume")
    n_planes = probs_.shape[0]
    sums = probs_.sum(axis=0)
    zero = sums <= 0
    safe = np.where(zero, 1.0, sums)
    out = probs_ / safe
    out[:, zero] = 1.0 / n_planes
    return out, int(np.count_nonzero(zero))


def normalize_dpv_counted(dpv: Dpv) -> Tuple[Dpv, int]:
    """`normalize_dpv`, also returning the zero-mass pixel count."""
    sums = dpv.probs.sum(axis=0)
    if np.all(np.abs(sums - 1.0) <= _SUM_EXACT):
        return Dpv.build(dpv.labels, dpv.probs, dpv.label_unit), 0
    probs, zero_mass = normalize_probs(dpv.probs)
    if zero_mass:
        logger.warning(
            "%d zero-mass pixels reset to a uniform distribution", zero_mass
        )
    return Dpv.build(dpv.labels, probs, dpv.label_unit), zero_mass


def normalize_dpv(dpv: Dpv) -> Dpv:
    """Restore a per-pixel probability distribution."""
    return normalize_dpv_counted(dpv)[0]


def expected_label(dpv: Dpv) -> DisparityMap:
    """Probability-weighted sum of the plane labels at every pixel."""
    if not dpv.normalized:
        raise PreconditionError("expected_label needs a normalized volume")
    values = np.tensordot(dpv.labels, dpv.probs, axes=1)
    return DisparityMap(values=values, unit=dpv.label_unit)


def anchor_depth(
    camera: CameraModel, world_point: ArrayLike
) -> Tuple[Tuple[float, float], float]:
    """Project a world point, returning its pixel and camera-frame depth."""
    x_cam, y_cam, z = camera.to_camera(world_point)
    if z <= 0:
        raise BehindCameraError(
            f"point {tuple(np.asarray(world_point))} has depth {z:g}"
        )
    pixel = (
        float(camera.fx * x_cam / z + camera.cx),
        float(camera.fy * y_cam / z + camera.cy),
    )
    return pixel, float(z)
