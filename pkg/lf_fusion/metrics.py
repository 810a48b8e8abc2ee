# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Disparity and image quality metrics."""
from typing import List, Optional, Tuple
from logging import getLogger

import attr
import numpy as np
from numpy.typing import ArrayLike
from scipy.ndimage import gaussian_filter

from lf_fusion.errors import MetricError, RescaleError
from lf_fusion.models import LightField

logger = getLogger("metrics")

PSNR_CAP = 99.0
PPE_THRESHOLDS = (0.05, 0.1)
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
# Radius of the Gaussian window: int(truncate * sigma + 0.5)
SSIM_RADIUS = int(SSIM_TRUNCATE * SSIM_SIGMA + 0.5)


def _pair(
    est: ArrayLike, gt: ArrayLike, mask: Optional[ArrayLike]
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Masked samples of est and gt, flattened over pixels (and channels)."""
    est_ = np.asarray(est, dtype=np.float64)
    gt_ = np.asarray(gt, dtype=np.float64)
    if est_.shape != gt_.shape:
        raise MetricError(f"shapes differ: {est_.shape} vs {gt_.shape}")
    if mask is None:
        mask_ = np.ones(gt_.shape[:2], dtype=bool)
    else:
        mask_ = np.asarray(mask, dtype=bool)
        if mask_.shape != gt_.shape[:2]:
            raise MetricError(
                f"mask {mask_.shape} does not match {gt_.shape[:2]}"
            )
    if not mask_.any():
        raise MetricError("mask selects no pixels")
    return est_[mask_], gt_[mask_], mask_


def mse(
    est: ArrayLike, gt: ArrayLike, mask: Optional[ArrayLike] = None
) -> float:
    """Mean squared difference over the masked pixels."""
    e, g, _ = _pair(est, gt, mask)
    return float(np.mean((e - g) ** 2))


def mae(
    est: ArrayLike, gt: ArrayLike, mask: Optional[ArrayLike] = None
) -> float:
    """Mean absolute difference over the masked pixels."""
    e, g, _ = _pair(est, gt, mask)
    return float(np.mean(np.abs(e - g)))


def ppe(
    est: ArrayLike,
    gt: ArrayLike,
    threshold: float,
    mask: Optional[ArrayLike] = None,
) -> float:
    """Percentage of masked pixels with an error strictly below threshold."""
    if threshold <= 0:
        raise MetricError(f"threshold must be > 0, got {threshold}")
    e, g, _ = _pair(est, gt, mask)
    return float(100.0 * np.count_nonzero(np.abs(e - g) < threshold) / e.size)


def psnr(
    est: ArrayLike,
    gt: ArrayLike,
    peak: float = 1.0,
    mask: Optional[ArrayLike] = None,
) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 for equal inputs."""
    error = mse(est, gt, mask)
    if error == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak ** 2 / error)))


def ssim_map(
    est: ArrayLike, gt: ArrayLike, peak: float = 1.0
) -> np.ndarray:
    """Per-pixel SSIM of two (H, W) or (H, W, C) images, per channel."""
    x = np.asarray(est, dtype=np.float64)
    y = np.asarray(gt, dtype=np.float64)
    if x.shape != y.shape:
        raise MetricError(f"shapes differ: {x.shape} vs {y.shape}")
    window = 2 * SSIM_RADIUS + 1
    if min(x.shape[:2]) < window:
        raise MetricError(
            f"image {x.shape[:2]} is smaller than the {window}px window"
        )
    # filter spatially only
    sigma = (SSIM_SIGMA, SSIM_SIGMA) + (0,) * (x.ndim - 2)

    def blur(a: np.ndarray) -> np.ndarray:
        return gaussian_filter(
            a, sigma=sigma, truncate=SSIM_TRUNCATE, mode="reflect"
        )

    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x * mu_x
    var_y = blur(y * y) - mu_y * mu_y
    cov = blur(x * y) - mu_x * mu_y
    return ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    )


def ssim(
    est: ArrayLike,
    gt: ArrayLike,
    peak: float = 1.0,
    mask: Optional[ArrayLike] = None,
) -> float:
    """
    Mean single-scale SSIM with an 11x11 Gaussian window (sigma 1.5).

    Windows touching the border are dropped; with a mask, the mean runs over
    the masked pixels that remain.
    """
    values = ssim_map(est, gt, peak)
    inner = (slice(SSIM_RADIUS, -SSIM_RADIUS),) * 2
    cropped = values[inner]
    if mask is not None:
        keep = np.asarray(mask, dtype=bool)[inner]
        if not keep.any():
            raise MetricError("mask selects no pixels away from the border")
        cropped = cropped[keep]
    return float(cropped.mean())


def linear_rescale_to_reference(
    est: ArrayLike,
    gt: ArrayLike,
    invert: bool = False,
    mask: Optional[ArrayLike] = None,
) -> np.ndarray:
    """
    Affinely map ``est`` so its masked min and max match those of ``gt``.

    With ``invert`` the estimate is reciprocated first (depth to
    disparity). A constant estimate maps to gt's minimum.
    """
    e, g, _ = _pair(est, gt, mask)
    values = np.asarray(est, dtype=np.float64)
    if invert:
        if np.any(values == 0):
            raise RescaleError("cannot invert an estimate containing zeros")
        values = 1.0 / values
        e = 1.0 / e
    g_min, g_max = float(g.min()), float(g.max())
    if g_max == g_min:
        raise RescaleError("reference has no range")
    e_min, e_max = float(e.min()), float(e.max())
    if e_max == e_min:
        logger.warning("constant estimate, rescaled to the reference minimum")
        return np.full(values.shape, g_min)
    return (values - e_min) / (e_max - e_min) * (g_max - g_min) + g_min


def normalize_range(
    values: ArrayLike, reference: ArrayLike, mask: Optional[ArrayLike] = None
) -> np.ndarray:
    """Map ``values`` by the reference's masked [min, max] onto [0, 1]."""
    _, ref, _ = _pair(reference, reference, mask)
    low, high = float(ref.min()), float(ref.max())
    if high == low:
        raise RescaleError("reference has no range")
    return (np.asarray(values, dtype=np.float64) - low) / (high - low)


@attr.s(auto_attribs=True, slots=True, frozen=True)
class MetricsReport:
    """Disparity error statistics; image scores when images were given."""

    mse: float
    mae: float
    ppe_005: float
    ppe_01: float
    n_pixels: int
    mask_coverage: float
    psnr: Optional[float] = None
    ssim: Optional[float] = None

    def __attrs_post_init__(self) -> None:
        for value in (self.ppe_005, self.ppe_01):
            if not 0 <= value <= 100:
                raise MetricError(f"ppe out of range: {value}")
        if self.ssim is not None and not -1 <= self.ssim <= 1:
            raise MetricError(f"ssim out of range: {self.ssim}")


def evaluate_disparity(
    est: ArrayLike, gt: ArrayLike, mask: Optional[ArrayLike] = None
) -> MetricsReport:
    """MSE, MAE and PPE at 0.05 and 0.1 over the masked pixels."""
    _, _, mask_ = _pair(est, gt, mask)
    low, high = PPE_THRESHOLDS
    return MetricsReport(
        mse=mse(est, gt, mask_),
        mae=mae(est, gt, mask_),
        ppe_005=ppe(est, gt, low, mask_),
        ppe_01=ppe(est, gt, high, mask_),
        n_pixels=int(mask_.sum()),
        mask_coverage=float(mask_.mean()),
    )


@attr.s(auto_attribs=True, slots=True, frozen=True)
class ViewScore:
    """Scores of one rendered SAI."""

    row: int
    col: int
    psnr: float
    ssim: float
    coverage: float


@attr.s(auto_attribs=True, slots=True, frozen=True)
class LightFieldReport:
    """Per-view scores, their means, and PSNR over the whole light field."""

    views: List[ViewScore]
    mean_psnr: float
    mean_ssim: float
    flat_psnr: float


def evaluate_light_field(
    est: LightField, gt: LightField, masks: Optional[np.ndarray] = None
) -> LightFieldReport:
    """Score every SAI against the ground truth, honoring validity masks."""
    if est.views.shape != gt.views.shape:
        raise MetricError(
            f"light fields differ: {est.views.shape} vs {gt.views.shape}"
        )
    if masks is None:
        masks = np.ones(est.views.shape[:4], dtype=bool)
    views = []
    squared = 0.0
    samples = 0
    for row in range(est.rows):
        for col in range(est.cols):
            mask = masks[row, col]
            view, truth = est.views[row, col], gt.views[row, col]
            e, g, _ = _pair(view, truth, mask)
            squared += float(np.sum((e - g) ** 2))
            samples += e.size
            views.append(
                ViewScore(
                    row=row,
                    col=col,
                    psnr=psnr(view, truth, 1.0, mask),
                    ssim=ssim(view, truth, 1.0, mask),
                    coverage=float(mask.mean()),
                )
            )
    flat_mse = squared / samples
    flat = PSNR_CAP
    if flat_mse > 0:
        flat = min(PSNR_CAP, -10.0 * float(np.log10(flat_mse)))
    return LightFieldReport(
        views=views,
        mean_psnr=float(np.mean([v.psnr for v in views])),
        mean_ssim=float(np.mean([v.ssim for v in views])),
        flat_psnr=float(flat),
    )
