# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
"""Plane-sweep estimation of a source disparity probability volume."""
from typing import List, Tuple
from logging import getLogger

import attr
import numpy as np
from numpy.typing import ArrayLike
from scipy.ndimage import uniform_filter

from lf_fusion.core import expected_label
from lf_fusion.errors import (
    FrameError,
    ParameterError,
    PreconditionError,
    UnsupportedGridError,
)
from lf_fusion.models import (
    PARALLAX_SIGN,
    DisparityMap,
    Dpv,
    LabelUnit,
    LightField,
    frozen_array,
)
from lf_fusion.util.image import bilinear_sample
from lf_fusion.util.parallel import parallel_map

logger = getLogger("estimation")

SWEEP_VIEWS = ("cross", "full")


@attr.s(auto_attribs=True, slots=True, frozen=True)
class PlaneSweepConfig:
    """Plane-sweep parameters; disparities are pixels per angular step."""

    n_planes: int = 100
    d_min: float = 0.05
    d_max: float = 2.0
    window: int = 1
    temperature: float = 0.1
    views: str = "cross"

    def __attrs_post_init__(self) -> None:
        if self.n_planes < 2:
            raise ParameterError(
                f"need at least 2 planes, got {self.n_planes}"
            )
        if not self.d_min < self.d_max:
            raise ParameterError(
                f"empty sweep range [{self.d_min}, {self.d_max}]"
            )
        if self.window < 0:
            raise ParameterError(f"window must be >= 0, got {self.window}")
        if self.temperature <= 0:
            raise ParameterError(
                f"temperature must be > 0, got {self.temperature}"
            )
        if self.views not in SWEEP_VIEWS:
            raise ParameterError(f"views must be one of {SWEEP_VIEWS}")

    @property
    def labels(self) -> np.ndarray:
        """Uniformly spaced disparity hypotheses."""
        return np.linspace(self.d_min, self.d_max, self.n_planes)


@attr.s(auto_attribs=True, slots=True, frozen=True, eq=False)
class CostVolume:
    """Matching cost per plane, (K, H, W), with source-disparity labels."""

    labels: np.ndarray = attr.ib(converter=frozen_array)
    cost: np.ndarray = attr.ib(converter=frozen_array)
    label_unit: LabelUnit = LabelUnit.SOURCE_DISPARITY


def sweep_offsets(
    light_field: LightField, views: str
) -> List[Tuple[int, int]]:
    """(row, col) of every SAI compared against the central one."""
    center_row, center_col = light_field.center_index
    return [
        (row, col)
        for row in range(light_field.rows)
        for col in range(light_field.cols)
        if (row, col) != (center_row, center_col)
        and (views == "full" or row == center_row or col == center_col)
    ]


def _plane_cost(
    light_field: LightField,
    offsets: List[Tuple[int, int]],
    disparity: float,
    window: int,
) -> np.ndarray:
    center = light_field.central_view
    height, width = light_field.height, light_field.width
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    total = np.zeros((height, width))
    count = np.zeros((height, width))
    for row, col in offsets:
        du, dv = light_field.angular_offset(row, col)
        sample, valid = bilinear_sample(
            light_field.views[row, col],
            xs + PARALLAX_SIGN * disparity * du,
            ys + PARALLAX_SIGN * disparity * dv,
        )
        sq = np.sum((sample - center) ** 2, axis=-1)
        total += np.where(valid, sq, 0.0)
        count += valid
    size = 2 * window + 1
    total = uniform_filter(total, size=size, mode="constant")
    count = uniform_filter(count, size=size, mode="constant")
    seen = count > 1e-9
    mean = np.maximum(total, 0.0) / np.where(seen, count, 1.0)
    return np.where(seen, mean, np.nan)


def plane_sweep_cost(
    light_field: LightField, cfg: PlaneSweepConfig
) -> CostVolume:
    """Windowed mean squared difference to the central SAI, per plane."""
    if light_field.rows % 2 == 0 or light_field.cols % 2 == 0:
        raise UnsupportedGridError(
            f"angular grid {light_field.rows}x{light_field.cols} has no "
            f"central view"
        )
    offsets = sweep_offsets(light_field, cfg.views)
    labels = cfg.labels
    if not offsets:
        logger.warning("single-view light field: every plane costs 0")
        return CostVolume(
            labels=labels,
            cost=np.zeros(
                (cfg.n_planes, light_field.height, light_field.width)
            ),
        )
    planes = parallel_map(
        lambda d: _plane_cost(light_field, offsets, d, cfg.window), labels
    )
    cost = np.stack(planes)
    unseen = np.isnan(cost)
    if unseen.any():
        worst = np.nanmax(np.where(unseen.all(axis=0), 0.0, cost), axis=0)
        cost = np.where(unseen, worst, cost)
    logger.info(
        "Swept %d planes over %d SAIs (%s)",
        cfg.n_planes,
        len(offsets),
        cfg.views,
    )
    return CostVolume(labels=labels, cost=cost)


def cost_to_probability(cost: CostVolume, temperature: float) -> Dpv:
    """Softmin over planes."""
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    if not np.all(np.isfinite(cost.cost)):
        raise PreconditionError("cost volume has non-finite entries")
    logits = -cost.cost / temperature
    logits = logits - logits.max(axis=0, keepdims=True)
    weights = np.exp(logits)
    probs = weights / weights.sum(axis=0, keepdims=True)
    return Dpv.build(cost.labels, probs, cost.label_unit)


def estimate_dpv(light_field: LightField, cfg: PlaneSweepConfig) -> Dpv:
    """Plane sweep followed by softmin."""
    return cost_to_probability(
        plane_sweep_cost(light_field, cfg), cfg.temperature
    )


def estimate_initial_disparity(dpv: Dpv) -> DisparityMap:
    """Expected source disparity of a freshly estimated volume."""
    if dpv.label_unit != LabelUnit.SOURCE_DISPARITY:
        raise FrameError(
            f"expected a source-disparity volume, got {dpv.label_unit.name}"
        )
    return expected_label(dpv)


def argmin_nearest(cost: ArrayLike, labels: ArrayLike) -> np.ndarray:
    """Per-pixel best plane; ties go to the larger disparity."""
    labels_ = np.asarray(labels)
    order = np.argsort(-labels_, kind="stable")
    best = np.argmin(np.asarray(cost)[order], axis=0)
    return order[best]
