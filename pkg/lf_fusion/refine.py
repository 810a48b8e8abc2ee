# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Classical-substitute volume smoothing and guided disparity refinement."""
from typing import List, Tuple
from logging import getLogger

import attr
import numpy as np
from numpy.typing import ArrayLike
from scipy.ndimage import uniform_filter

from lf_fusion.core import expected_label, normalize_probs
from lf_fusion.errors import (
    FrameError,
    GuideError,
    ParameterError,
    PreconditionError,
)
from lf_fusion.models import DisparityMap, Dpv, LabelUnit
from lf_fusion.util.parallel import get_threads, parallel_map

logger = getLogger("refine")

# Shown next to every output of this module
SUBSTITUTE_TAG = "classical-substitute"


@attr.s(auto_attribs=True, slots=True, frozen=True)
class RefineConfig:
    """Radii in pixels or planes; sigma_range in [0, 1] intensity units."""

    spatial_radius: int = 2
    plane_radius: int = 1
    bilateral_radius: int = 5
    sigma_spatial: float = 3.0
    sigma_range: float = 0.1

    def __attrs_post_init__(self) -> None:
        if min(self.spatial_radius, self.plane_radius) < 0:
            raise ParameterError("smoothing radii must be >= 0")
        if self.bilateral_radius < 0:
            raise ParameterError("bilateral radius must be >= 0")
        if self.sigma_spatial <= 0 or self.sigma_range <= 0:
            raise ParameterError("bilateral sigmas must be > 0")


def smooth_volume(
    probs: ArrayLike, spatial_radius: int, plane_radius: int
) -> np.ndarray:
    """Edge-replicated box filter over planes and pixels of (K, H, W)."""
    side = 2 * spatial_radius + 1
    size = (2 * plane_radius + 1, side, side)
    smoothed = uniform_filter(
        np.asarray(probs, dtype=np.float64), size=size, mode="nearest"
    )
    # the running sum leaves rounding residue below zero
    return np.maximum(smoothed, 0.0)


def filter_volume(fused: Dpv, cfg: RefineConfig) -> Dpv:
    """Box-smooth a normalized volume and renormalize it."""
    if not fused.normalized:
        raise PreconditionError("filter_volume needs a normalized volume")
    if cfg.spatial_radius == 0 and cfg.plane_radius == 0:
        return fused
    probs, _ = normalize_probs(
        smooth_volume(fused.probs, cfg.spatial_radius, cfg.plane_radius)
    )
    return Dpv.build(fused.labels, probs, fused.label_unit)


def extract_disparity(fused_filtered: Dpv) -> DisparityMap:
    """Expected inverse depth of the fused volume."""
    if fused_filtered.label_unit != LabelUnit.INVERSE_DEPTH:
        raise FrameError(
            f"expected an inverse-depth volume, got "
            f"{fused_filtered.label_unit.name}"
        )
    return expected_label(fused_filtered)


def _row_bands(height: int, bands: int) -> List[Tuple[int, int]]:
    edges = np.linspace(0, height, max(1, min(bands, height)) + 1)
    cuts = edges.round().astype(int)
    return [(int(a), int(b)) for a, b in zip(cuts[:-1], cuts[1:]) if b > a]


def guided_refine(
    disp: DisparityMap, guide: ArrayLike, cfg: RefineConfig
) -> DisparityMap:
    """Joint bilateral filter of ``disp`` steered by the guide image."""
    values = disp.values
    guide_ = np.asarray(guide, dtype=np.float64)
    if guide_.ndim == 2:
        guide_ = guide_[..., None]
    if guide_.shape[:2] != values.shape:
        raise GuideError(
            f"guide {guide_.shape[:2]} does not match disparity "
            f"{values.shape}"
        )
    radius = cfg.bilateral_radius
    height, width = values.shape
    pad = ((radius, radius), (radius, radius))
    disp_pad = np.pad(values, pad)
    guide_pad = np.pad(guide_, pad + ((0, 0),))
    inside = np.pad(np.ones(values.shape, dtype=bool), pad)
    offsets = [
        (dy, dx)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
    ]
    spatial = [
        np.exp(-(dy * dy + dx * dx) / (2 * cfg.sigma_spatial ** 2))
        for dy, dx in offsets
    ]

    def filter_band(band: Tuple[int, int]) -> np.ndarray:
        top, bottom = band
        rows = slice(top + radius, bottom + radius)
        cols = slice(radius, radius + width)
        center = guide_pad[rows, cols]
        num = np.zeros((bottom - top, width))
        den = np.zeros((bottom - top, width))
        for (dy, dx), w_s in zip(offsets, spatial):
            r = slice(top + radius + dy, bottom + radius + dy)
            c = slice(radius + dx, radius + dx + width)
            diff = np.sum((guide_pad[r, c] - center) ** 2, axis=-1)
            weight = np.where(
                inside[r, c],
                w_s * np.exp(-diff / (2 * cfg.sigma_range ** 2)),
                0.0,
            )
            num += weight * disp_pad[r, c]
            den += weight
        return num / den

    bands = parallel_map(filter_band, _row_bands(height, get_threads()))
    return DisparityMap(values=np.concatenate(bands), unit=disp.unit)


def refine_disparity(
    fused: Dpv, guide: ArrayLike, cfg: RefineConfig
) -> DisparityMap:
    """Smooth, extract and guide-filter a fused volume."""
    filtered = filter_volume(fused, cfg)
    refined = guided_refine(extract_disparity(filtered), guide, cfg)
    logger.info(
        "Refined disparity (%s: box r=%d/%d, bilateral r=%d)",
        SUBSTITUTE_TAG,
        cfg.spatial_radius,
        cfg.plane_radius,
        cfg.bilateral_radius,
    )
    return refined
